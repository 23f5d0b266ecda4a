from optiplan import OptiplanException


class QotException(OptiplanException):
    pass


class EmptyPath(QotException):
    pass


class SingularSystem(QotException):
    pass


class NotConverged(QotException):

    def __init__(self, iterations: int):
        super().__init__('Coordinate descent did not converge after %d iterations' % iterations)
        self.iterations = iterations


class EmptySelection(QotException):
    pass


class SchemaMismatch(QotException):

    def __init__(self, column: str, message: str = None):
        super().__init__(message or 'Missing or invalid column %r' % column)
        self.column = column
