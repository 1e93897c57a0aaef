"""choicenet: neural discrete-choice models with fungible cost utilities."""

__version__ = '0.1.0'
