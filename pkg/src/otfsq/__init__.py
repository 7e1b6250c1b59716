"""OTFS receivers under coarse ADC quantization.

Library layout:

- ``channel``   delay-Doppler multipath channel and effective operator
- ``modem``     constellations, modulation, hard demapping
- ``quantizer`` uniform ADC model and posterior-moment denoisers
- ``banded``    quasi-banded Gram assembly, banded LU, blockwise inversion
- ``detectors`` GEC-SR (fast and dense), GAMP, and LMMSE detectors
- ``sim``       Monte Carlo trial engine, metrics, sweep/trace/bench drivers
- ``validate``  self-check oracle families used by ``otfsq validate``
- ``cli``       command-line entry point
"""

__version__ = "0.1.0"

from .channel import (  # noqa: F401
    ChannelOperator,
    ChannelPath,
    ChannelRealization,
    DenseOperator,
    OtfsDims,
    build_h0,
    doppler_dft,
    draw_channel,
    ideal_channel_matrix,
)
from .banded import (  # noqa: F401
    BandedFactors,
    QuasiBandedMatrix,
    assemble_gram,
    assemble_psi,
    dense_inverse_oracle,
    factorize,
    solve,
    trace_inverse,
)
from .config import ExperimentConfig  # noqa: F401
from .detectors import (  # noqa: F401
    DetectionError,
    DetectionResult,
    DetectorConfig,
    extrinsic,
    gamp_detect,
    gec_sr_detect,
    lmmse_detect,
    prior_denoiser,
)
from .modem import Constellation, hard_demap, modulate, qpsk  # noqa: F401
from .quantizer import (  # noqa: F401
    NoiseSpec,
    QuantizerSpec,
    awgn_posterior_moments,
    choose_step,
    interval_of,
    output_posterior_moments,
    quantize,
)
