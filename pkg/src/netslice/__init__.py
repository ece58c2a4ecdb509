"""RAN-CN converged network slicing simulator with a ReAct agent control loop."""

__version__ = "0.1.0"
