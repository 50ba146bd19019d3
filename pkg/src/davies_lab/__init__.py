"""Davies thermalization laboratory."""
