# Pipeline configuration: flags > JSON config file > FAIRTEXT_* environment > defaults
import os
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from fairtext import SEED_LEXICON, load_json
from modules.data.ingestion import split_corpus
from modules.detection.detector import Hyperparams
from modules.errors import ConfigError, InvalidArgumentError
from modules.evaluation.fairness import DEFAULT_PAIRS
from modules.mitigation.mitigation import MitigationPolicy

logger = logging.getLogger(__name__)

PATH_FIELDS = ('corpus', 'lexicon', 'embeddings', 'model', 'scores', 'assignment', 'out_dir')
# Paths that must exist whenever they are set (model may be created by a run)
INPUT_FIELDS = ('corpus', 'lexicon', 'embeddings', 'scores', 'assignment')
SECTIONS = {'detector': Hyperparams, 'mitigation': MitigationPolicy}
METRIC_KEYS = ('pairs', 'p', 'w')
EVALUATE_ON = ('test', 'all')


def _env_seed() -> int:
    value = os.getenv('FAIRTEXT_SEED', '42')
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"FAIRTEXT_SEED must be an integer, got {value!r}")


@dataclass(frozen=True)
class PipelineConfig:
    corpus: Optional[str] = None
    lexicon: Optional[str] = None
    embeddings: Optional[str] = None
    embeddings_format: str = "text"
    embeddings_limit: Optional[int] = None
    model: Optional[str] = None
    scores: Optional[str] = None
    assignment: Optional[str] = None
    out_dir: Optional[str] = None

    train_fraction: float = 0.8
    seed: int = 42
    min_df: int = 1
    max_features: Optional[int] = None
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    policy: MitigationPolicy = field(default_factory=MitigationPolicy)
    threshold: float = 0.5

    pairs: Tuple[Tuple[str, str], ...] = DEFAULT_PAIRS
    p: float = -5.0
    w: float = 0.25
    evaluate_on: str = "test"
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgumentError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidArgumentError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.evaluate_on not in EVALUATE_ON:
            raise InvalidArgumentError(f"evaluate_on must be one of {EVALUATE_ON}, got {self.evaluate_on!r}")
        if self.workers < 1:
            raise InvalidArgumentError(f"workers must be >= 1, got {self.workers}")
        if not 0.0 <= self.w <= 1.0:
            raise InvalidArgumentError(f"w must be in [0, 1], got {self.w}")
        pairs = tuple(tuple(pair) for pair in self.pairs)
        if any(len(pair) != 2 or not all(pair) for pair in pairs):
            raise InvalidArgumentError(f"pairs must be (unprivileged, privileged) names, got {self.pairs}")
        object.__setattr__(self, 'pairs', pairs)
        # The run seed also drives training
        if self.hyperparams.seed != self.seed:
            object.__setattr__(self, 'hyperparams', replace(self.hyperparams, seed=self.seed))

    def snapshot(self) -> dict:
        """JSON-friendly copy of every setting, for the run manifest."""
        data = asdict(self)
        data['pairs'] = [list(pair) for pair in self.pairs]
        return data


def parse_pairs(text: str) -> Tuple[Tuple[str, str], ...]:
    """'female:male,asian:white' -> (('female', 'male'), ('asian', 'white'))."""
    pairs = []
    for item in text.split(','):
        item = item.strip()
        if not item:
            continue
        parts = item.split(':')
        if len(parts) != 2 or not all(p.strip() for p in parts):
            raise InvalidArgumentError(f"pair {item!r} must look like unprivileged:privileged")
        pairs.append((parts[0].strip(), parts[1].strip()))
    if not pairs:
        raise InvalidArgumentError("at least one group pair is needed")
    return tuple(pairs)


def load_config(path) -> dict:
    """
    Reads a JSON config into flat PipelineConfig keyword arguments.
    Relative paths are taken relative to the config file's folder.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = load_json(path)
    except ValueError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")

    known = {f.name for f in fields(PipelineConfig)} - {'hyperparams', 'policy', 'pairs', 'p', 'w'}
    values = {}
    for key, value in data.items():
        if key in SECTIONS:
            allowed = {f.name for f in fields(SECTIONS[key])}
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: '{key}' must be an object")
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"{path}: unknown key '{key}.{sorted(unknown)[0]}'")
            values[key] = dict(value)
        elif key == 'metric':
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: 'metric' must be an object")
            unknown = set(value) - set(METRIC_KEYS)
            if unknown:
                raise ConfigError(f"{path}: unknown key 'metric.{sorted(unknown)[0]}'")
            for metric_key, metric_value in value.items():
                values[metric_key] = parse_pairs(metric_value) if metric_key == 'pairs' and isinstance(metric_value, str) \
                    else metric_value
        elif key in known:
            values[key] = value
        else:
            raise ConfigError(f"{path}: unknown key '{key}'")

    for key in PATH_FIELDS:
        if values.get(key):
            values[key] = str((path.parent / values[key]).resolve()) if not Path(values[key]).is_absolute() \
                else values[key]
    logger.debug("Loaded config %s: %s", path, values)
    return values


# Flag name -> config field, per argument group
_GROUPS = {
    'corpus': [('--corpus', 'corpus', str, 'corpus CSV (id, comment_text, six label columns)'),
               ('--seed', 'seed', int, 'seed for the split and training (env FAIRTEXT_SEED)'),
               ('--train-fraction', 'train_fraction', float, 'share of documents used for training')],
    'lexicon': [('--lexicon', 'lexicon', str, 'bias lexicon JSON (default: the bundled seed lexicon)')],
    'embeddings': [('--embeddings', 'embeddings', str, 'word2vec embeddings file'),
                   ('--embeddings-format', 'embeddings_format', str, 'text or binary'),
                   ('--embeddings-limit', 'embeddings_limit', int, 'only load the first N words')],
    'detector': [('--learning-rate', 'learning_rate', float, 'gradient step size'),
                 ('--l2', 'l2_penalty', float, 'L2 penalty on the weights'),
                 ('--epochs', 'epochs', int, 'passes over the training data'),
                 ('--batch-size', 'batch_size', int, 'documents per gradient step'),
                 ('--min-df', 'min_df', int, 'drop terms seen in fewer documents'),
                 ('--max-features', 'max_features', int, 'keep at most this many terms')],
    'model': [('--model', 'model', str, 'saved detector (model.json)'),
              ('--threshold', 'threshold', float, 'a document is flagged when any score reaches this')],
    'scores': [('--scores', 'scores', str, 'scores CSV (id + six label scores) instead of running the detector'),
               ('--threshold', 'threshold', float, 'a document is flagged when any score reaches this')],
    'mitigation': [('--k-min', 'k_min', int, 'fewest embedding substitutes before falling back'),
                   ('--k-max', 'k_max', int, 'most substitutes per span'),
                   ('--min-similarity', 'min_similarity', float, 'drop substitutes below this cosine'),
                   ('--workers', 'workers', int, 'documents mitigated in parallel')],
    'metrics': [('--assignment', 'assignment', str, 'CSV id,subgroups (default: subgroups of tagged spans)'),
                ('--pairs', 'pairs', parse_pairs, 'unprivileged:privileged pairs, comma separated'),
                ('--p', 'p', float, 'power-mean exponent for the bias AUC'),
                ('--w', 'w', float, 'weight of the overall AUC in the bias AUC'),
                ('--evaluate-on', 'evaluate_on', str, 'test split or all documents'),
                ('--train-fraction', 'train_fraction', float, 'share of documents used for training'),
                ('--seed', 'seed', int, 'seed for the split (env FAIRTEXT_SEED)')],
    'output': [('--out-dir', 'out_dir', str, 'folder for run artifacts (env FAIRTEXT_OUT_DIR)')],
}
_HYPERPARAM_KEYS = {f.name for f in fields(Hyperparams)} - {'seed'}
_POLICY_KEYS = {f.name for f in fields(MitigationPolicy)}


def add_config_arguments(parser, *groups):
    """Adds `--config` plus the flags of the named groups. Flags default to None (= not given)."""
    parser.add_argument('--config', help='JSON config file; flags override its values')
    added = set()
    for group in groups:
        for flag, dest, kind, help_text in _GROUPS[group]:
            if flag in added:
                continue
            added.add(flag)
            parser.add_argument(flag, dest=f'cfg_{dest}', type=kind, default=None, help=help_text)


def resolve_config(args) -> PipelineConfig:
    """Merges defaults, environment, the config file and the flags found on `args`."""
    values = {'seed': _env_seed()}
    if os.getenv('FAIRTEXT_OUT_DIR'):
        values['out_dir'] = os.getenv('FAIRTEXT_OUT_DIR')
    if getattr(args, 'config', None):
        values.update(load_config(args.config))

    detector = dict(values.pop('detector', {}))
    mitigation = dict(values.pop('mitigation', {}))
    for key, value in vars(args).items():
        if not key.startswith('cfg_') or value is None:
            continue
        name = key[4:]
        if name in _HYPERPARAM_KEYS:
            detector[name] = value
        elif name in _POLICY_KEYS:
            mitigation[name] = value
        else:
            values[name] = value

    values.setdefault('lexicon', str(SEED_LEXICON))
    try:
        return PipelineConfig(hyperparams=Hyperparams(**detector), policy=MitigationPolicy(**mitigation), **values)
    except TypeError as e:
        raise ConfigError(f"bad configuration: {e}") from e


def require(config: PipelineConfig, *names):
    """Every named setting must be present, and input files must exist."""
    for name in names:
        value = getattr(config, name)
        if value in (None, ''):
            raise ConfigError(f"missing required setting '{name}' (use --{name.replace('_', '-')} or the config file)")
        if name in INPUT_FIELDS and not Path(value).exists():
            raise ConfigError(f"{name} file {value} does not exist")
    for name in INPUT_FIELDS:
        value = getattr(config, name)
        if value and name not in names and not Path(value).exists():
            raise ConfigError(f"{name} file {value} does not exist")


def evaluation_ids(corpus, config: PipelineConfig) -> list:
    """Ids the metrics are computed on: the held-out split, or every document."""
    if config.evaluate_on == 'all':
        return corpus.ids
    _, test = split_corpus(corpus, config.train_fraction, config.seed)
    return test.ids
