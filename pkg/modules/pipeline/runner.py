# End-to-end run: detect -> identify -> mitigate -> re-detect -> evaluate before/after -> compare
import time
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import gensim
import numpy as np
import pandas as pd
import scipy
import sklearn

import fairtext
from fairtext import log_command, save_json, utc_now
from modules.data.ingestion import load_corpus, split_corpus, write_corpus
from modules.data.lexicon import load_lexicon
from modules.detection.detector import (
    MODEL_FORMAT_VERSION, export_scores, fit_vectorizer, load_model, predict_corpus, save_model, train,
)
from modules.evaluation.fairness import (
    assignment_from_tags, compare_reports, evaluation_report, load_assignment,
)
from modules.mitigation.embeddings import load_embeddings
from modules.mitigation.mitigation import mitigate_corpus, suggestions_to_json
from modules.pipeline.config import PipelineConfig, evaluation_ids, require

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = 'out'
AFTER_SCORING_NOTE = "post-mitigation scores come from the same detector re-run on the rewritten text"


class WarningCollector(logging.Handler):
    """Keeps every WARNING+ message logged while a run is in progress."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


@dataclass
class StageRecord:
    name: str
    status: str = "running"
    documents: Optional[int] = None
    seconds: Optional[float] = None


@dataclass
class RunManifest:
    config: dict
    versions: dict
    started_at: str
    stages: List[StageRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    status: str = "running"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    finished_at: Optional[str] = None
    artifacts: List[str] = field(default_factory=list)
    note: str = AFTER_SCORING_NOTE

    def to_json(self) -> dict:
        return asdict(self)


def component_versions(lexicon_version: Optional[str] = None) -> dict:
    return {
        'fairtext': fairtext.__version__,
        'model_format': MODEL_FORMAT_VERSION,
        'lexicon': lexicon_version,
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'scikit-learn': sklearn.__version__,
        'gensim': gensim.__version__,
    }


class PipelineRun:
    """One run of the full pipeline; every artifact lands in config.out_dir."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out_dir = Path(config.out_dir or DEFAULT_OUT_DIR)
        self.manifest = RunManifest(config.snapshot(), component_versions(), utc_now())

    @contextmanager
    def stage(self, name: str):
        record = StageRecord(name)
        self.manifest.stages.append(record)
        logger.info("Stage '%s' started", name)
        started = time.perf_counter()
        try:
            yield record
        except Exception:
            record.status = "failed"
            self.manifest.failed_stage = name
            raise
        finally:
            record.seconds = round(time.perf_counter() - started, 6)
        record.status = "done"
        logger.info("Stage '%s' done in %.3fs (%s documents)", name, record.seconds, record.documents)

    def _write(self, name: str) -> Path:
        self.manifest.artifacts.append(name)
        return self.out_dir / name

    def execute(self):
        config = self.config

        with self.stage('load') as st:
            corpus = load_corpus(config.corpus, has_labels=True)
            lexicon = load_lexicon(config.lexicon)
            store = load_embeddings(config.embeddings, config.embeddings_format, config.embeddings_limit)
            self.manifest.versions['lexicon'] = lexicon.version
            st.documents = len(corpus)
            if config.scores:
                logger.warning("'scores' is ignored by run; both stages are scored by the detector")

        with self.stage('split') as st:
            train_part, test_part = split_corpus(corpus, config.train_fraction, config.seed)
            st.documents = len(train_part)

        with self.stage('detector') as st:
            if config.model and Path(config.model).is_file():
                vectorizer, model = load_model(config.model)
                st.documents = 0
            else:
                vectorizer = fit_vectorizer(train_part, config.min_df, config.max_features)
                model = train(vectorizer, train_part, config.hyperparams)
                save_model(self._write('model.json'), vectorizer, model)
                st.documents = len(train_part)

        with self.stage('detect') as st:
            scores_before = predict_corpus(model, vectorizer, corpus)
            export_scores(self._write('scores_before.csv'), corpus.ids, scores_before)
            st.documents = len(corpus)

        with self.stage('mitigate') as st:
            result = mitigate_corpus(corpus, model, vectorizer, lexicon, store, config.policy,
                                     config.threshold, scores=scores_before, workers=config.workers)
            write_corpus(result.corpus, self._write('rewritten.csv'), with_labels=False)
            save_json(self._write('suggestions.json'), suggestions_to_json(corpus, result))
            st.documents = len(result.rewritten_ids)

        with self.stage('redetect') as st:
            rewritten = result.corpus
            scores_after = predict_corpus(model, vectorizer, rewritten)
            export_scores(self._write('scores_after.csv'), rewritten.ids, scores_after)
            st.documents = len(rewritten)

        with self.stage('evaluate') as st:
            # Group membership is fixed on the original text and reused after mitigation
            if config.assignment:
                assignment = load_assignment(config.assignment, corpus)
            else:
                assignment = assignment_from_tags(corpus, lexicon)
            ids = evaluation_ids(corpus, config)
            position = {doc_id: row for row, doc_id in enumerate(corpus.ids)}
            rows = [position[i] for i in ids]
            gold = corpus.subset(ids)
            before = evaluation_report(gold, scores_before[rows], assignment, config.threshold,
                                       config.pairs, config.p, config.w, lexicon, gold)
            after = evaluation_report(gold, scores_after[rows], assignment, config.threshold,
                                      config.pairs, config.p, config.w, lexicon, rewritten.subset(ids))
            save_json(self._write('report_before.json'), before.to_json())
            save_json(self._write('report_after.json'), after.to_json())
            st.documents = len(ids)

        with self.stage('compare') as st:
            comparison = compare_reports(before.disparate_impact, after.disparate_impact)
            save_json(self._write('comparison.json'), comparison)
            st.documents = len(ids)
            for row in comparison['pairs']:
                logger.info("DI %s:%s  %s -> %s%s", row['unprivileged'], row['privileged'],
                            row['di_before'], row['di_after'],
                            '  (entered fair band)' if row['entered_fair_band'] else '')
        return comparison


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """
    Runs every stage in order and writes manifest.json, also when a stage fails
    (the failing stage is recorded and the error re-raised).
    """
    run = PipelineRun(config)
    collector = WarningCollector()
    root = logging.getLogger()
    root.addHandler(collector)
    logger.info("Run started: out_dir=%s seed=%s", run.out_dir, config.seed)
    try:
        run.execute()
        run.manifest.status = "done"
    except Exception as e:
        run.manifest.status = "failed"
        run.manifest.error = str(e)
        logger.error("Run failed in stage '%s': %s", run.manifest.failed_stage, e)
        raise
    finally:
        root.removeHandler(collector)
        run.manifest.warnings = collector.messages
        run.manifest.finished_at = utc_now()
        save_json(run.out_dir / 'manifest.json', run.manifest.to_json())
    logger.info("Run finished; artifacts in %s", run.out_dir)
    return run.manifest


# fairtext run: the whole pipeline from one config
@log_command
def cmd_run(args):
    from modules.pipeline.config import resolve_config

    config = resolve_config(args)
    require(config, 'corpus', 'lexicon', 'embeddings')
    run_pipeline(config)


def register_commands(subparsers):
    from modules.pipeline.config import add_config_arguments

    p = subparsers.add_parser('run', help='detect, mitigate and evaluate in one go')
    add_config_arguments(p, 'corpus', 'lexicon', 'embeddings', 'detector', 'model',
                         'mitigation', 'metrics', 'output')
    p.set_defaults(handler=cmd_run)
