"""harforge: wearable stream fusion, sleep-wake imputation, hierarchical
activity classification, and group-relative performance charts."""

__version__ = "0.1.0"
