"""CatBERT: a compressed transformer phishing-email detector that fuses
message text with header-derived context features."""

__version__ = "0.1.0"
