"""Focused He+ beam creation of silicon-vacancy arrays in 4H-SiC: forward
simulation (ion transport, defect sampling, confocal and HBT optics) and the
estimators used to recover yields from it."""

__version__ = "0.1.0"
