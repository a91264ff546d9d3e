"""
Retrospective pipeline: settled data read long after care delivery.
"""
from typing import List, Sequence

from ehr_model import DayRecord, EncounterTruth
from pipelines.base import BasePipeline, day_values, event_view, make_row
from utils.errors import TemporalBoundsError
from utils.timeline import day_index, from_minutes


class RetrospectivePipeline(BasePipeline):
    """
    Each event lands in the warehouse `lag` minutes after entry and is visible
    when that happens by `as_of`. Revisions made before `as_of - lag` are
    applied when the pipeline sees revisions after extraction; otherwise the
    value is frozen at first extraction.
    """

    lag_stream = "retrospective_lag"

    def check_bounds(self, truth: Sequence[EncounterTruth], as_of: int):
        """The extraction date must not precede the period's first admission."""
        if truth:
            first_admit = min(t.admit_at for t in truth)
            if as_of < first_admit:
                raise TemporalBoundsError(
                    f"retrospective as_of {from_minutes(as_of)} precedes the period start "
                    f"{from_minutes(first_admit)}"
                )

    def encounter_rows(self, encounter: EncounterTruth, as_of: int) -> List[DayRecord]:
        """Settled rows for every calendar day of the stay up to `as_of`."""
        lags = self.draw_lags(encounter.encounter_id, len(encounter.events))
        visible = []
        for event, lag in zip(encounter.events, lags):
            visible_at = as_of - int(lag)
            if self.config.sees_revisions_after_extraction:
                state_at = visible_at
            else:
                state_at = event.entered_at + int(lag)
            view = event_view(event, visible_at, state_at)
            if view is not None:
                visible.append(view)

        first = day_index(encounter.admit_at)
        last = day_index(min(encounter.discharge_at, as_of))
        return [make_row(encounter, day, day_values(visible, day)) for day in range(first, last + 1)]
