"""
Evaluation reports: per-bin tp/fp/fn counts with derived precision, recall and F1
"""
import csv
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

from exceptions import ConfigurationError

MODE_STANDARD = 'standard'
MODE_RECALL_ONLY = 'recall_only'


def precision(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def f1_score(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r else 0.0


@dataclass
class BinRecord:
    """Counts of one bin or position"""

    bin_id: str
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, tp: int = 0, fp: int = 0, fn: int = 0):
        self.tp += tp
        self.fp += fp
        self.fn += fn

    def metrics(self, mode: str = MODE_STANDARD) -> Dict[str, float]:
        """
        Precision, recall and F1 of the counts

        In recall-only mode precision is forced to 1 and F1 equals recall.
        """
        r = recall(self.tp, self.fn)
        if mode == MODE_RECALL_ONLY:
            return {'precision': 1.0, 'recall': r, 'f1': r}
        p = precision(self.tp, self.fp)
        return {'precision': p, 'recall': r, 'f1': f1_score(p, r)}

    def to_dict(self, mode: str = MODE_STANDARD) -> Dict[str, Any]:
        return {'bin_id': self.bin_id, 'tp': self.tp, 'fp': self.fp, 'fn': self.fn, **self.metrics(mode)}


@dataclass
class EvalReport:
    """
    Ordered bins plus metadata; counts of several reports merge by bin id

    Attributes:
        name: Report name (e.g. 'vehicles', 'lanes', 'radar')
        bins: BinRecords in emission order
        metadata: Thresholds and dataset identification
        mode: 'standard' or 'recall_only'
    """

    name: str
    bins: List[BinRecord] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    mode: str = MODE_STANDARD

    def __post_init__(self):
        if self.mode not in (MODE_STANDARD, MODE_RECALL_ONLY):
            raise ConfigurationError(f"Unknown report mode {self.mode!r}")

    def bin(self, bin_id: str) -> BinRecord:
        """Existing bin by id, created (appended) if missing"""
        for record in self.bins:
            if record.bin_id == bin_id:
                return record
        record = BinRecord(bin_id)
        self.bins.append(record)
        return record

    def get(self, bin_id: str) -> Optional[BinRecord]:
        return next((record for record in self.bins if record.bin_id == bin_id), None)

    def summary(self) -> BinRecord:
        total = BinRecord('all')
        for record in self.bins:
            total.add(record.tp, record.fp, record.fn)
        return total

    def merge(self, other: 'EvalReport') -> 'EvalReport':
        """New report with the counts of both; bins keep first-seen order"""
        if other.mode != self.mode:
            raise ConfigurationError(f"Cannot merge {self.mode} and {other.mode} reports")
        merged = EvalReport(self.name, metadata=dict(self.metadata), mode=self.mode)
        for source in (self, other):
            for record in source.bins:
                merged.bin(record.bin_id).add(record.tp, record.fp, record.fn)
        return merged

    @classmethod
    def merge_all(cls, reports: Iterable['EvalReport'], name: str, metadata: Optional[Dict[str, Any]] = None,
                  mode: str = MODE_STANDARD) -> 'EvalReport':
        merged = cls(name, metadata=dict(metadata or {}), mode=mode)
        for report in reports:
            merged = merged.merge(report)
        merged.metadata = dict(metadata or merged.metadata)
        return merged

    def sort_bins(self, key) -> 'EvalReport':
        self.bins.sort(key=key)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'mode': self.mode,
            'metadata': self.metadata,
            'bins': [record.to_dict(self.mode) for record in self.bins],
            'summary': self.summary().to_dict(self.mode),
        }

    def write_json(self, path: str):
        _ensure_parent(path)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def write_csv(self, path: str):
        """One row per bin plus a final 'all' row"""
        _ensure_parent(path)
        fields = ['report', 'bin_id', 'tp', 'fp', 'fn', 'precision', 'recall', 'f1']
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=fields, lineterminator='\n')
            writer.writeheader()
            for record in self.bins + [self.summary()]:
                writer.writerow({'report': self.name, **record.to_dict(self.mode)})


def _ensure_parent(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
