"""Near-Maxwellian Vlasov-Poisson-Landau simulator and verification suite."""
__version__ = "0.1.0"
