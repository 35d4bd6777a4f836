"""Air/bone-conduction speech enhancement with subband multi-branch fusion."""

from .audio import SAMPLE_RATE, Waveform, read_wav, write_wav
from .errors import CheckpointError, ConfigurationError, NumericalError, PreconditionError
from .generator import Generator, GeneratorConfig, generator_forward
from .metrics import si_sdr
from .pqmf import FilterBank, SubbandTensor, analyze, default_bank, design_prototype, synthesize
from .train import TrainConfig, enhance, load_generator

__version__ = "0.1.0"

__all__ = [
    "SAMPLE_RATE",
    "CheckpointError",
    "ConfigurationError",
    "FilterBank",
    "Generator",
    "GeneratorConfig",
    "NumericalError",
    "PreconditionError",
    "SubbandTensor",
    "TrainConfig",
    "Waveform",
    "analyze",
    "default_bank",
    "design_prototype",
    "enhance",
    "generator_forward",
    "load_generator",
    "read_wav",
    "si_sdr",
    "synthesize",
    "write_wav",
]
