"""Caption-corpus cleaning toolkit.

Judge each target-language caption of an image region with a vision-capable
chat backend, route flagged captions to a visual regenerator or a
retranslator, and emit a corrected corpus, alongside corpus ingestion/export
tooling and BLEU/RIBES evaluation.
"""

__version__ = "0.1.0"
