"""Exception hierarchy shared by all pipeline stages.

Every error carries the name of the stage that raised it so the CLI can
print module-qualified diagnostics.
"""


class PipelineError(Exception):
    module = "edgecough"

    def __init__(self, message, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def qualified(self):
        return f"{self.module}: {self}"


class InvalidArgument(PipelineError, ValueError):
    pass


class ParseError(PipelineError):
    module = "ingest"


class AlignmentError(PipelineError):
    module = "ingest"


class ModelLoadError(PipelineError):
    module = "inference"


class InferenceError(PipelineError):
    module = "inference"


class ConfigError(PipelineError):
    pass
