"""Cross-resonance gate modeling for a transmon coupled to a two-mode dimon.

Submodules
----------
model         device parameters, presets and bare operators
frames        dressed basis, drive frame and rotating-wave approximation
effective     least-action block diagonalization and Pauli coefficients
dynamics      pulse envelopes, propagation, noise and echoed-CR calibration
httomo        Bloch-trajectory fitting and Hamiltonian tomography
qpt           two-qubit process tomography and physical projection
benchmarking  Clifford RB, interleaved RB and coherence limits
numerics      Nelder-Mead and linear-algebra kernels
cli           the ``crossres`` command
"""

from .benchmarking import (
    CoherenceParams,
    coherence_limit_1q,
    coherence_limit_2q,
    interleaved_rb,
    run_rb,
    sample_clifford2,
)
from .dynamics import (
    NoiseSpec,
    PulseEnvelope,
    calibrate_zx_gate,
    echoed_cr_channel,
    echoed_cr_sequence,
    simulate_cr_rabi,
)
from .effective import (
    EffectiveHamiltonian,
    LeastActionBlockDiagonalizer,
    cr_effective_hamiltonian,
    least_action_block_diagonalize,
    static_zz,
    sweep_amplitude,
    sweep_detuning,
)
from .httomo import BlochTrajectoryFitter, HamiltonianTomography, bloch_closed_form, hamiltonian_tomography
from .model import CircuitSpec, DriveSpec, ModeSpec, load_preset
from .numerics import nelder_mead
from .qpt import ProcessTomography, gate_fidelity_from_process, project_physical, run_qpt

__version__ = "0.1.0"
