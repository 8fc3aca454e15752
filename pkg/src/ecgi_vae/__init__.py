"""ECG imaging of transmembrane potential with a sequential-VAE prior.

Modules
-------
geometry     lattice heart mesh, lead layout, lead-field operator
apsim        Aliev-Panfilov simulation, activation times, APD
corpus       training corpus and held-out ECG test cases
nn           LSTM/dense layers with exact gradients, Adam, gradient check
svae         sequential VAE, ELBO training, latent prior
inversion    EM inference of (U, Z) from ECG
baselines    Greensite and fixed-model reconstructions
metrics      NRMSE, Dice, scar detection, origin error
experiment   three-setting runner and reports
container    named-tensor file format
"""
from .apsim import APParams, PacingConfig, ScarConfig, TMPSequence, activation_times, apd, simulate
from .geometry import HeartMesh, LeadField, build_lattice_mesh, load_lead_field, synthesize_lead_field
from .inversion import EMConfig, MeasurementModel, PosteriorU, e_step, em_infer, estimate_beta
from .svae import SVAE, SVAEConfig, ZPrior, estimate_z_prior, train

__version__ = "0.1.0"
