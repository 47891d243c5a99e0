"""Command-line tooling: serve, offline reports, replay, classifier eval, validation, loadgen."""
