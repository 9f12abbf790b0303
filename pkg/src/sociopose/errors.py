"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SocioposeError(Exception):
    exit_code = 1


class ConfigError(SocioposeError):
    exit_code = 2


class DataError(SocioposeError, ValueError):
    exit_code = 3


class LeakageError(DataError):
    """A clip id appears in both the training and the test split."""


class NumericalError(SocioposeError, ArithmeticError):
    exit_code = 4


class PoseError(DataError):
    """Invalid pose data for one clip/frame/agent.

    The location is kept on the instance so rejection reports can say
    where the problem was.
    """

    def __init__(self, message, clip_id=None, frame=None, agent=None):
        self.clip_id = clip_id
        self.frame = frame
        self.agent = agent
        where = []
        if clip_id is not None:
            where.append(f"clip={clip_id}")
        if frame is not None:
            where.append(f"frame={frame}")
        if agent is not None:
            where.append(f"agent={agent}")
        self.reason = message
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class InvalidDepthError(PoseError):
    pass


class DegenerateDirectionError(PoseError):
    pass


class ClipRejected(PoseError):
    pass
