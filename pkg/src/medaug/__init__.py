"""Medication prediction from contrastively pretrained ontology and co-occurrence embeddings."""
