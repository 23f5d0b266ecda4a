from optiplan import OptiplanException


class PlanningException(OptiplanException):
    pass


class NoDiversePath(PlanningException):
    pass


class NoCapacity(PlanningException):

    def __init__(self, link_id: str, required: float):
        super().__init__('No SRLG-diverse bypass for %s has %.3f spare capacity' % (link_id, required))
        self.link_id = link_id
        self.required = required


class InsufficientResources(PlanningException):
    pass


class InfeasibleScenario(PlanningException):

    def __init__(self, scenario_id: str, reason: str):
        super().__init__('Scenario %s cannot be served: %s' % (scenario_id, reason))
        self.scenario_id = scenario_id
