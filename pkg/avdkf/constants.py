"""
Constants
"""

# every variance (decoder, transition, encoder, mixture) and NMF entry is floored here
VARIANCE_FLOOR = 1e-12

# added to the power spectrogram before the encoder's log compression
POWER_EPS = 1e-8

# SI-SDR error-energy epsilon, caps the score of a perfect estimate
SI_SDR_EPS = 1e-12

# log-spectral distance epsilon
LSD_EPS = 1e-12

# gains are kept inside this range in gamma_map mode
GAIN_MIN = 1e-3
GAIN_MAX = 1e3

# default SNR grid of `avdkf mix`
DEFAULT_SNRS_DB = (-5.0, 0.0, 5.0, 10.0, 15.0)

# name of the resolved config echoed into every output directory
RESOLVED_CONFIG_NAME = "config.toml"
