"""
Database connection and session management.
The store is optional: nothing is created until a URL is configured, either
through NLPMIX_DATABASE_URL or the CLI's --cache-db flag.
"""

import logging
from typing import Optional

from sqlalchemy import create_engine, inspect
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool

from nlpmix import config
from nlpmix.models import Base

logger = logging.getLogger(__name__)

engine: Optional[Engine] = None
SessionLocal: Optional[sessionmaker] = None


def make_engine(url: str) -> Engine:
    """Engine for a database URL."""
    if url.startswith("sqlite"):
        # SQLite shared across worker threads
        return create_engine(
            url,
            connect_args={"check_same_thread": False},
            poolclass=StaticPool,
            echo=False,
        )
    return create_engine(url, echo=False, pool_pre_ping=True)


def configure(url: Optional[str] = None) -> Engine:
    """Bind the module-level engine and session factory to a URL."""
    global engine, SessionLocal
    url = url or config.DATABASE_URL
    if not url:
        raise ValueError("no database URL configured (set NLPMIX_DATABASE_URL or pass --cache-db)")
    engine = make_engine(url)
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    return engine


def _engine() -> Engine:
    return engine if engine is not None else configure()


def init_db(url: Optional[str] = None) -> None:
    """Create all tables."""
    bound = configure(url) if url else _engine()
    Base.metadata.create_all(bind=bound)
    logger.info("database initialised at %s", bound.url)


def get_db() -> Session:
    """Get a database session."""
    _engine()
    return SessionLocal()


def close_db(db: Optional[Session]) -> None:
    """Close a database session."""
    if db:
        db.close()


def table_exists(table_name: str) -> bool:
    """Check if a table exists in the database."""
    return table_name in inspect(_engine()).get_table_names()


def reset_db() -> None:
    """Drop all tables and recreate them. Destroys every stored marginal."""
    Base.metadata.drop_all(bind=_engine())
    init_db()
    logger.info("database reset")
