"""qhydro: quantile streamflow forecasting on a conceptual hydrology core.

The pieces, in pipeline order: ``ingest`` loads and cleans station CSVs,
``calibrate`` fits the GR4J parameters by differential evolution,
``features`` turns forcing plus production-store fluxes into sliding
windows, ``neural``/``ensemble`` train one network per quantile level and
merge them into interval forecasts, ``extremes`` converts annual maxima
into flood thresholds and risk categories, ``metrics`` scores everything,
and ``pipeline``/``cli`` wire the stages together.
"""

__version__ = "0.1.0"

from . import calibrate, ensemble, extremes, features, gr4j, ingest, metrics, neural

__all__ = [
    "__version__",
    "calibrate",
    "ensemble",
    "extremes",
    "features",
    "gr4j",
    "ingest",
    "metrics",
    "neural",
]
