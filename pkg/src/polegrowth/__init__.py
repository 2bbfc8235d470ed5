"""Statistics for growth rates on bacterial lineage trees.

Modules: :mod:`lineage` (label arithmetic), :mod:`ingest` (file formats),
:mod:`preprocess` (cleaning), :mod:`bar` (bifurcating autoregression),
:mod:`stattests` (test kernel), :mod:`pipelines` (analyses), :mod:`cli`.
"""
__version__ = "0.1.0"
