# Verification lab for free-choice, no-signalling and static-information assumptions
__version__ = "0.1.0"
