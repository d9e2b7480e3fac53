"""Paraxial X-ray phase-contrast imaging: forward models and inverse operators."""
__version__ = "0.1.0"

from .errors import (ClampWarning, GridMismatchError, SamplingWarning, SingularFilterError,
                     StageError, TruncationWarning, ValidityWarning, XpciError, XpciWarning)
from .constants import HC_KEV_M, kev_from_wavelength, photon_energy, wavelength_from_kev
from .field import (ComplexField, Grid2D, RealField, VectorField2D, intensity_and_phase,
                    transverse_poynting)
from .propagation import (ConeBeamGeometry, PropagationPlan, fresnel_number,
                          fresnel_propagate, spherical_wave_image)
from .sample import (ProjectedObject, RefractiveVolume, apply_transmission, project_volume,
                     sphere_phantom, transmission_function)
from .multislice import multislice_batch, multislice_propagate, slice_transmissions
from .lsi import (AberrationSet, Filter, Propagate, TransferFunction, Transmission, apply_lsi,
                  cascade, free_space_transfer, phase_contrast_transfer,
                  transfer_from_aberrations, weak_phase_image)
from .coherence import (Ensemble, SpectralEntry, SpectralStack, coherence_envelope,
                        cross_spectral_density, detected_intensity, propagate_ensemble,
                        source_blur, spectral_density)
from .fokker_planck import DiffusionMap, deflection_angles, fp_step, tie_step
from .retrieval import (AUTO, LinearTFState, ctf_retrieve, darkfield_solve, gradient_forward,
                        invert_lsi_single, paganin_thickness, schiske_combine, smeared_forward)
