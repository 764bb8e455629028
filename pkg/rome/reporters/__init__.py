"""Output writers: CSV tables, JSON payloads, markdown summaries, SVG plots, checkpoints."""
