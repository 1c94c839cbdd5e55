"""Reference cleaner plugins used by the harness."""
