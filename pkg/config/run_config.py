"""
Configuración de una ejecución: archivo clave=valor con secciones

Las claves tienen la forma `seccion.clave` (model, contextual, pretrain, data,
optimizer, train, ablation) más `seed` y `out_dir`. El archivo se lee con
python-dotenv y cada valor se convierte al tipo del valor por defecto.
"""

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from dotenv import dotenv_values

from engine.optim import AdamState
from model.cad import CadConfig
from model.contextual import ContextualConfig
from pretrain.alignment import PretrainConfig
from synthetic.dataset import EpisodeDistribution
from synthetic.features import AnswerVocab, FeatureDims
from utils.errors import ConfigError
from utils.helpers import hash_text

TRUE_VALUES = ('1', 'true', 'yes', 'on')
FALSE_VALUES = ('0', 'false', 'no', 'off')


@dataclass
class ModelSection:
    dim: int = 64
    heads: int = 4
    n_answers: int = 42
    n_time_labels: int = 60
    variant: str = '3CA'
    use_contextual: bool = True
    inputs: str = 'AVQ'
    positional: bool = False


@dataclass
class DataSection:
    """Generador sintético: distribución de episodios y dimensiones"""
    n_episodes: int = 600
    n_classes: int = 3
    n_cues: int = 10
    cues_per_clip: int = 10
    presence_prob: float = 0.7
    both_prob: float = 0.5
    min_duration: int = 2
    alignment_noise: float = 0.0
    base_noise: float = 0.5
    max_count: int = 6
    prototype_seed: int = 0
    d_a: int = 16
    d_t: int = 16
    s: int = 10
    c: int = 16
    l_q: int = 4
    frames_per_cue: int = 1

    def dims(self) -> FeatureDims:
        return FeatureDims(d_a=self.d_a, d_t=self.d_t, s=self.s, c=self.c, l_q=self.l_q,
                           frames_per_cue=self.frames_per_cue)

    def distribution(self) -> EpisodeDistribution:
        return EpisodeDistribution(
            n_classes=self.n_classes, n_cues=self.n_cues, presence_prob=self.presence_prob,
            both_prob=self.both_prob, min_duration=self.min_duration,
            alignment_noise=self.alignment_noise, cues_per_clip=self.cues_per_clip, dims=self.dims(),
        )

    def vocab(self) -> AnswerVocab:
        return AnswerVocab(self.n_classes, self.max_count)


@dataclass
class OptimizerSection:
    lr: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


@dataclass
class TrainSection:
    epochs: int = 25
    batch_size: int = 64
    init_from: str = ''


@dataclass
class AblationSection:
    """Listas separadas por comas; variants vacío = todas las filas"""
    variants: str = ''
    seeds: str = '0,1,2,3,4'
    pos_probs: str = ''
    sample_fracs: str = ''
    mask_fracs: str = ''
    workers: int = 0

    def variant_list(self) -> List[str]:
        return [v.strip() for v in self.variants.split(',') if v.strip()]

    def seed_list(self) -> List[int]:
        try:
            return [int(s) for s in self.seeds.split(',') if s.strip()]
        except ValueError:
            raise ConfigError(f"ablation.seeds debe ser una lista de enteros: {self.seeds}")

    def _fraction_list(self, name: str) -> List[float]:
        text = getattr(self, name)
        try:
            values = [float(p) for p in text.split(',') if p.strip()]
        except ValueError:
            raise ConfigError(f"ablation.{name} debe ser una lista de números: {text}")
        for value in values:
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"ablation.{name}: {value} fuera de [0, 1]")
        return values

    def pos_prob_list(self) -> List[float]:
        return self._fraction_list('pos_probs')

    def sample_frac_list(self) -> List[float]:
        return self._fraction_list('sample_fracs')

    def mask_frac_list(self) -> List[float]:
        return self._fraction_list('mask_fracs')


SECTIONS = {
    'model': ModelSection,
    'contextual': ContextualConfig,
    'pretrain': PretrainConfig,
    'data': DataSection,
    'optimizer': OptimizerSection,
    'train': TrainSection,
    'ablation': AblationSection,
}
TOP_LEVEL = {'seed': 0, 'out_dir': 'runs'}


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    contextual: ContextualConfig = field(default_factory=ContextualConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    data: DataSection = field(default_factory=DataSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    train: TrainSection = field(default_factory=TrainSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    seed: int = 0
    out_dir: str = 'runs'

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Comprobaciones entre secciones"""
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed debe ser un entero sin signo de 64 bits, recibido {self.seed}")
        if self.model.n_time_labels != self.pretrain.n_time_labels:
            raise ConfigError(
                f"model.n_time_labels ({self.model.n_time_labels}) debe coincidir con "
                f"pretrain.n_time_labels ({self.pretrain.n_time_labels})"
            )
        vocab_size = self.data.vocab().size
        if self.model.n_answers < vocab_size:
            raise ConfigError(f"model.n_answers ({self.model.n_answers}) menor que el vocabulario ({vocab_size})")
        for name in ('epochs', 'batch_size'):
            if getattr(self.train, name) < 1:
                raise ConfigError(f"train.{name} debe ser >= 1")
        for name in ('epochs', 'batch_size', 'pairs_per_epoch', 'n_streams'):
            if getattr(self.pretrain, name) < 1:
                raise ConfigError(f"pretrain.{name} debe ser >= 1")
        if self.data.n_episodes < 1:
            raise ConfigError("data.n_episodes debe ser >= 1")
        self.ablation.pos_prob_list()
        self.ablation.sample_frac_list()
        self.ablation.mask_frac_list()
        self.data.dims()
        self.data.distribution()
        self.cad_config()

    def cad_config(self, **changes) -> CadConfig:
        """CadConfig de esta ejecución, con cambios opcionales (variantes de ablación)"""
        kwargs = dict(
            dim=self.model.dim, heads=self.model.heads, n_answers=self.model.n_answers,
            n_time_labels=self.model.n_time_labels, variant=self.model.variant,
            use_contextual=self.model.use_contextual, inputs=self.model.inputs,
            positional=self.model.positional, d_a=self.data.d_a, d_t=self.data.d_t,
            d_v=self.data.c, contextual=self.contextual,
        )
        kwargs.update(changes)
        return CadConfig(**kwargs)

    @property
    def bank_size(self) -> int:
        return max(self.data.n_classes, self.pretrain.n_time_labels)

    def items(self, include_out_dir: bool = True) -> Dict[str, Any]:
        values = {}
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                values[f"{section}.{f.name}"] = getattr(obj, f.name)
        values['seed'] = self.seed
        if include_out_dir:
            values['out_dir'] = self.out_dir
        return values

    def render(self, include_out_dir: bool = True) -> str:
        """Representación canónica `clave=valor`, ordenada"""
        return ''.join(f"{key}={_format_value(value)}\n"
                       for key, value in sorted(self.items(include_out_dir).items()))


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_hash(cfg: RunConfig) -> str:
    """Hash de la configuración resuelta; no depende del directorio de salida"""
    return hash_text(cfg.render(include_out_dir=False))


def parse_value(key: str, raw: Optional[Any], default: Any) -> Any:
    """
    Convierte un valor de texto al tipo del valor por defecto

    Raises:
        ConfigError: Si el valor falta o no se puede convertir
    """
    if raw is None:
        raise ConfigError(f"La clave {key} no tiene valor")
    text = str(raw).strip()
    if isinstance(default, bool):
        if text.lower() in TRUE_VALUES:
            return True
        if text.lower() in FALSE_VALUES:
            return False
        raise ConfigError(f"Valor booleano inválido para {key}: {text}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"Valor inválido para {key}: {text} (se esperaba {type(default).__name__})")
    return text


def build_run_config(values: Mapping[str, Optional[Any]]) -> RunConfig:
    """
    Construye un RunConfig a partir de claves planas

    Raises:
        ConfigError: Clave desconocida, valor inválido o archivo referenciado inexistente
    """
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    top: Dict[str, Any] = {}
    for key, raw in values.items():
        if '.' in key:
            section, name = key.split('.', 1)
            if section not in SECTIONS:
                raise ConfigError(f"Sección desconocida en la clave {key}")
            defaults = SECTIONS[section]()
            if name not in {f.name for f in fields(defaults)}:
                raise ConfigError(f"Clave desconocida: {key}")
            sections[section][name] = parse_value(key, raw, getattr(defaults, name))
        elif key in TOP_LEVEL:
            top[key] = parse_value(key, raw, TOP_LEVEL[key])
        else:
            raise ConfigError(f"Clave desconocida: {key}")

    built = {name: SECTIONS[name](**kwargs) for name, kwargs in sections.items()}
    cfg = RunConfig(**built, **top)
    if cfg.train.init_from and not Path(cfg.train.init_from).exists():
        raise ConfigError(f"No existe el checkpoint indicado en train.init_from: {cfg.train.init_from}")
    return cfg


def load_run_config(path: Union[str, Path], overrides: Optional[Mapping[str, Optional[Any]]] = None,
                    defaults: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Carga la configuración de una ejecución

    Prioridad: overrides (línea de comandos) > archivo > defaults (entorno)

    Args:
        path: Archivo de configuración
        overrides: Valores que sustituyen a los del archivo (None se ignora)
        defaults: Valores usados si el archivo no los define

    Returns:
        RunConfig

    Raises:
        ConfigError: Si el archivo no existe o contiene claves/valores inválidos
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"No existe el archivo de configuración: {path}")
    values: Dict[str, Optional[Any]] = dict(defaults or {})
    values.update(dotenv_values(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = build_run_config(values)
    logging.info(f"Configuración cargada desde {path} (hash {config_hash(cfg)[:12]})")
    return cfg
