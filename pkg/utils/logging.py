import logging
import os


class StepNoiseFilter(logging.Filter):
    """Drops the integrator's per-step DEBUG records unless BLAB_VERBOSE_STEPS is set."""

    def filter(self, record):
        if os.environ.get("BLAB_VERBOSE_STEPS"):
            return True
        return not (record.levelno == logging.DEBUG and record.getMessage().startswith("step "))


class NewtonIterationFilter(logging.Filter):
    def filter(self, record):
        return not record.getMessage().startswith("newton iteration")
