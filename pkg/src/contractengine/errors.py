"""Exception root shared by every module.

Each error exposes ``tag``, a stable machine-readable name the CLI prints.
"""


class EngineError(Exception):
    @property
    def tag(self) -> str:
        return type(self).__name__
