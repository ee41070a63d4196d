"""strawdet: a numpy object-detection engine for three-maturity strawberry detection."""

__version__ = "0.1.0"

MATURITY_NAMES = ("immature", "nearly_mature", "mature")
