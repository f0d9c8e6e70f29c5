"""zicount: zero-inflated multivariate count models (ZINB, HNB, TLNPN)."""

__version__ = "1.0.0"
