"""Unit conversions. Everything internal is in Hartree atomic units."""

# time: 1 fs in atomic units of time (pinned; recorded in every output header)
AU_PER_FS = 41.341374575751

# default proton mass (a.u.)
PROTON_MASS = 1836.0
