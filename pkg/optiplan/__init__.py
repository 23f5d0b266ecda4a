__version__ = '0.1.0'


class OptiplanException(Exception):
    pass
