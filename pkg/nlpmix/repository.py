"""
Data access layer (repository pattern) for the marginal-likelihood store
and run manifests.
"""

import json
import logging
import threading
from typing import Any, Dict, List, Optional

from sqlalchemy.orm import Session

from nlpmix.models import LogMarginal, MarginalRecord, RunRecord

logger = logging.getLogger(__name__)


class MarginalRepository:
    """Memoised log marginal likelihood records."""

    @staticmethod
    def get(
        db: Session,
        data_key: str,
        prior_key: str,
        model_key: str,
        n_samples: int,
    ) -> Optional[MarginalRecord]:
        """Stored record for (data, prior, model, sample size)."""
        return (
            db.query(MarginalRecord)
            .filter(
                MarginalRecord.data_key == data_key,
                MarginalRecord.prior_key == prior_key,
                MarginalRecord.model_key == model_key,
                MarginalRecord.n_samples == n_samples,
            )
            .first()
        )

    @staticmethod
    def put(
        db: Session,
        data_key: str,
        prior_key: str,
        model_key: str,
        n_samples: int,
        seed: int,
        value: float,
        mc_se: float = 0.0,
    ) -> MarginalRecord:
        """Insert or overwrite a record."""
        record = MarginalRepository.get(db, data_key, prior_key, model_key, n_samples)
        if record is None:
            record = MarginalRecord(
                data_key=data_key,
                prior_key=prior_key,
                model_key=model_key,
                n_samples=n_samples,
            )
            db.add(record)
        record.seed = str(seed)
        record.value = value
        record.mc_se = mc_se
        db.commit()
        db.refresh(record)
        return record

    @staticmethod
    def count(db: Session, data_key: Optional[str] = None) -> int:
        query = db.query(MarginalRecord)
        if data_key is not None:
            query = query.filter(MarginalRecord.data_key == data_key)
        return query.count()

    @staticmethod
    def delete_for_data(db: Session, data_key: str) -> int:
        """Remove every record of one dataset; returns the number deleted."""
        deleted = db.query(MarginalRecord).filter(MarginalRecord.data_key == data_key).delete()
        db.commit()
        return deleted


class RunRepository:
    """Run manifests."""

    @staticmethod
    def record_run(db: Session, manifest: Dict[str, Any]) -> RunRecord:
        run = RunRecord(
            subcommand=manifest["config"]["subcommand"],
            seed=str(manifest["seed"]),
            version=manifest["version"],
            config_json=json.dumps(manifest["config"], sort_keys=True),
        )
        db.add(run)
        db.commit()
        db.refresh(run)
        return run

    @staticmethod
    def get_runs(db: Session, subcommand: Optional[str] = None) -> List[RunRecord]:
        query = db.query(RunRecord)
        if subcommand is not None:
            query = query.filter(RunRecord.subcommand == subcommand)
        return query.order_by(RunRecord.id).all()


class PersistentMarginalStore:
    """MarginalCache backing that reads and writes through MarginalRepository.

    A stored value is reused only when it was produced with the same seed,
    so cached and fresh searches see identical marginals.
    """

    def __init__(self, db: Session):
        self.db = db
        self._lock = threading.Lock()
        self.reads = 0
        self.writes = 0

    def get(self, data_key: str, prior_key: str, model_key: str, n_samples: int,
            seed: int) -> Optional[LogMarginal]:
        with self._lock:
            record = MarginalRepository.get(self.db, data_key, prior_key, model_key, n_samples)
        if record is None or record.seed != str(seed):
            return None
        self.reads += 1
        return LogMarginal(record.value, record.mc_se, record.n_samples)

    def put(self, data_key: str, prior_key: str, model_key: str, seed: int,
            value: LogMarginal) -> None:
        with self._lock:
            MarginalRepository.put(
                self.db, data_key, prior_key, model_key, value.n_samples, seed, value.value, value.mc_se
            )
            self.writes += 1
