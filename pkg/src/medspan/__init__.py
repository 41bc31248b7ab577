"""Medication span extraction toolkit.

Subpackages: textcore (cleaning/tokenization), annotstore (standoff
annotations), lexemb (embeddings and cloze pretraining), silverlabel
(weak supervision), tagger (the NER model), evalkit (span metrics),
harness (CLI, synthetic corpora, experiment recipes), alserver (the
active-learning annotation service).
"""
__version__ = "0.1.0"
