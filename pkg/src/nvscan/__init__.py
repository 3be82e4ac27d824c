"""Virtual scanning NV-center electrometer.

Simulates the full measurement chain of a diamond-tip scanning
electrometer: spin Hamiltonian and ODMR, dynamical-decoupling phase
accumulation with shot-noise readout, surface-charge screening, 2-D
electrode electrostatics, motion-enabled DC imaging, and closed-form
sensitivity analysis.
"""

__version__ = "0.1.0"

from .analysis import (SensitivityParams, monte_carlo_sensitivity,
                       sensitivity_ac, sensitivity_gradient, sine_fit, snr)
from .electrostatics import (ConductorRect, ElectrodeGeometry2D, FieldProfile,
                             Grid2D, ProjectionAxis, default_device,
                             field_at_height, gradient_x, project_zeta,
                             solve_laplace)
from .pulses import (CoherenceModel, DCWaveform, PulseSequence, ReadoutModel,
                     SampledWaveform, SinusoidWaveform, accumulated_phase,
                     apply_coherence, build_sequence, extract_phase,
                     four_block_rates, ramsey_train, simulate_readout)
from .scan import (ProbeConfig, ScanPlan, ScanResult, TipMotion,
                   first_harmonic_amplitude, motion_upconverted_amplitude,
                   nv_sample_distance, run_ac_scan, run_dc_scan)
from .screening import ScreeningModel, apply_screening, attenuation, phase_lead_deg
from .spin import (EigenSystem, FieldEnvironment, NVSpecies, SpinHamiltonian,
                   TransitionTable, build_hamiltonian, diagonalize,
                   odmr_spectrum, perturbative_splitting, transition_elements)
