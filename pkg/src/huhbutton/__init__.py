"""Pause-and-explain infrastructure for lecture videos.

Pipeline: parse a subtitle/transcript file, restore punctuation, split into
timestamped sentences, pre-generate two levels of explanations at fixed time
slots through a pluggable completion provider, persist the result as a bundle,
and serve it read-only over HTTP. A token ledger converts provider usage into
kg CO2e.
"""

__version__ = "0.1.0"
