"""
Pairing of prospective and retrospective rows that share encounter-days.
"""
from dataclasses import dataclass, field
from datetime import date
from typing import List, Tuple

import numpy as np

from features.matrix import FeatureMatrix
from utils.errors import SchemaError

RowKey = Tuple[str, date]


@dataclass
class PairedIndex:
    """Row positions of shared keys plus the leftovers of each side."""
    keys: List[RowKey] = field(default_factory=list)
    pro_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ret_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    unpaired_ret: List[RowKey] = field(default_factory=list)
    unpaired_pro: List[RowKey] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.keys)

    def unpaired_ret_dates(self) -> List[date]:
        return sorted({d for _, d in self.unpaired_ret})


def align_paired(pro: FeatureMatrix, ret: FeatureMatrix) -> PairedIndex:
    """
    Intersect the (encounter_id, date) keys of the two matrices, in
    prospective row order.

    Raises:
        SchemaError: the matrices have different column sets.
    """
    if list(pro.columns) != list(ret.columns):
        raise SchemaError(f"paired matrices differ in columns ({pro.n_cols} vs {ret.n_cols})")
    ret_index = ret.key_index()
    pro_keys = pro.keys()
    pro_index = {key: i for i, key in enumerate(pro_keys)}

    keys, pro_rows, ret_rows, unpaired_pro = [], [], [], []
    for i, key in enumerate(pro_keys):
        j = ret_index.get(key)
        if j is None:
            unpaired_pro.append(key)
            continue
        keys.append(key)
        pro_rows.append(i)
        ret_rows.append(j)
    unpaired_ret = [key for key in ret.keys() if key not in pro_index]
    return PairedIndex(
        keys=keys,
        pro_rows=np.asarray(pro_rows, dtype=np.int64),
        ret_rows=np.asarray(ret_rows, dtype=np.int64),
        unpaired_ret=unpaired_ret,
        unpaired_pro=unpaired_pro,
    )
