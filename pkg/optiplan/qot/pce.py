"""
Path-compute checks: predict the pre-FEC BER of a proposed wavelength and
accept it when the prediction is at or below the caller's threshold.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Union

import pandas as pd

from optiplan.netmodel import MultiLayerNetwork, OpticalRoute, k_shortest_optical_paths
from optiplan.qot.features import FREQUENCY_CENTER_THZ, HIGH_BER_LOG10, WavelengthRecord, records_frame, route_record
from optiplan.qot.models import TrainedModel

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATE_PATHS = 3

Record = Union[WavelengthRecord, Mapping]


@dataclass(frozen=True)
class Verdict:
    predicted: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.predicted <= self.threshold

    @property
    def verdict(self) -> str:
        return 'pass' if self.passed else 'fail'

    def to_dict(self) -> dict:
        return {'predicted_log10_ber': self.predicted, 'threshold': self.threshold, 'verdict': self.verdict}


def predict_records(model: TrainedModel, records: Union[pd.DataFrame, Sequence[Record]],
                    threshold: float = HIGH_BER_LOG10) -> List[Verdict]:
    frame = records if isinstance(records, pd.DataFrame) else records_frame(records)
    return [Verdict(float(p), threshold) for p in model.predict(frame)]


def predict_wavelength(model: TrainedModel, record: Record, threshold: float = HIGH_BER_LOG10) -> Verdict:
    return predict_records(model, [record], threshold)[0]


@dataclass(frozen=True)
class Selection:
    chosen: Optional[int]
    verdicts: List[Verdict]


def choose_alternate(verdicts: Sequence[Verdict]) -> Selection:
    """The passing alternate with the lowest predicted BER; first index wins ties."""
    passing = [i for i, v in enumerate(verdicts) if v.passed]
    chosen = min(passing, key=lambda i: (verdicts[i].predicted, i)) if passing else None
    return Selection(chosen, list(verdicts))


def record_for_route(network: MultiLayerNetwork, route: OpticalRoute, data_rate: int = 100,
                     frequency_thz: float = FREQUENCY_CENTER_THZ) -> WavelengthRecord:
    lengths = [network.fiber_spans[s].length_km for s in route.spans]
    # a regen placed at nodes[i] sits after span i - 1
    regen_after = [i - 1 for i, node in enumerate(route.nodes) if i > 0 and node in route.regen_sites]
    return route_record(lengths, regen_after, data_rate=data_rate, frequency_thz=frequency_thz,
                        n_passthrough_roadms=max(0, len(route.nodes) - 2 - len(regen_after)))


@dataclass(frozen=True)
class PceResult:
    routes: List[OpticalRoute]
    selection: Selection

    @property
    def route(self) -> Optional[OpticalRoute]:
        return None if self.selection.chosen is None else self.routes[self.selection.chosen]

    def to_dict(self) -> dict:
        return {'chosen': self.selection.chosen,
                'candidates': [dict(v.to_dict(), nodes=list(r.nodes), regens=list(r.regen_sites))
                               for r, v in zip(self.routes, self.selection.verdicts)]}


def pce_check(network: MultiLayerNetwork, src: str, dst: str, model: TrainedModel,
              threshold: float = HIGH_BER_LOG10, k: int = DEFAULT_CANDIDATE_PATHS, data_rate: int = 100,
              frequency_thz: float = FREQUENCY_CENTER_THZ) -> PceResult:
    """
    Score up to `k` shortest fiber paths between the ROADMs of sites `src`
    and `dst`; regenerated paths are judged by their worst section.
    """
    routes = k_shortest_optical_paths(network, network.node_of_site(src), network.node_of_site(dst), k)
    records = [record_for_route(network, r, data_rate, frequency_thz) for r in routes]
    selection = choose_alternate(predict_records(model, records, threshold))
    if selection.chosen is None:
        logger.info('No candidate path %s-%s meets log10 BER %.2f', src, dst, threshold)
    return PceResult(routes, selection)
