"""Chase engine and termination analysis for tuple-generating dependencies."""
