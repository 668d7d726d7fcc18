from .materials import Component, IonBeamSpec, TargetMaterial, helium_beam, silicon_carbide
from .physics import (
    electronic_stopping,
    max_energy_transfer,
    scattering_event,
    vacancies_from_recoil,
)
from .simulate import ImplantProfile, IonHistory, simulate_ion, simulate_profile

__all__ = [
    "Component",
    "ImplantProfile",
    "IonBeamSpec",
    "IonHistory",
    "TargetMaterial",
    "electronic_stopping",
    "helium_beam",
    "max_energy_transfer",
    "scattering_event",
    "silicon_carbide",
    "simulate_ion",
    "simulate_profile",
    "vacancies_from_recoil",
]
