"""Transformer pipelines for flow-based network intrusion detection.

The package is organised around three interchangeable model components
(input encoder, transformer stack, classification head) plus the dataset
plumbing needed to feed them: a declarative dataset schema, columnar
ingestion with cleaning, fit-on-train preprocessing, sliding-window
sequencing, a training/evaluation harness with timing instrumentation,
and a grid-search experiment runner.
"""

__version__ = "0.1.0"
