"""loopid: an iterative human-and-machine identification loop.

A classifier is trained on the first collection period, scores later
collections with free-energy confidence, routes low-confidence predictions to
annotators, and updates itself from the mix of human labels and
high-confidence pseudo-labels.
"""

__version__ = "0.1.0"
