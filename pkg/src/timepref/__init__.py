"""Survey harness for eliciting intertemporal preferences from chat language models."""

__version__ = "0.1.0"
