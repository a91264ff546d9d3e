"""
Prospective pipeline: near-real-time daily snapshots, blind to later revisions.
"""
from typing import List

from ehr_model import DayRecord, EncounterTruth
from pipelines.base import BasePipeline, day_values, event_view, make_row
from utils.timeline import day_index, day_index_of_date, midnight


class ProspectivePipeline(BasePipeline):
    """
    The row for calendar day D comes from the morning run at
    midnight(D + 1) + daily_cutoff. Events entered by that moment minus the
    run's lag are visible, valued at their latest revision before it.
    Outage days produce no row.
    """

    lag_stream = "prospective_lag"

    def snapshot_time(self, day: int) -> int:
        """Run time of the snapshot that scores calendar day `day`."""
        return midnight(day + 1) + self.config.daily_cutoff

    def encounter_rows(self, encounter: EncounterTruth, as_of: int) -> List[DayRecord]:
        """One row per non-outage calendar day of the stay."""
        first = day_index(encounter.admit_at)
        days = range(first, day_index(encounter.discharge_at) + 1)
        lags = self.draw_lags(encounter.encounter_id, len(days))
        outages = {day_index_of_date(d) for d in self.config.outage_days}

        rows = []
        for day, lag in zip(days, lags):
            if day in outages:
                continue
            moment = self.snapshot_time(day) - int(lag)
            state_at = as_of if self.config.sees_revisions_after_extraction else moment
            visible = []
            for event in encounter.events:
                view = event_view(event, moment, state_at)
                if view is not None:
                    visible.append(view)
            rows.append(make_row(encounter, day, day_values(visible, day)))
        return rows
