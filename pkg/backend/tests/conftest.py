import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from levelloop.config import EngineParams
from levelloop.database import get_db, init_db
from levelloop.main import app
from levelloop.services.rng import StreamId

# Coarse tolerances so engine tests stay fast; statistical accuracy is checked under -m slow.
FAST_PARAMS = EngineParams(step=1e-2, delta_touch=1e-4, delta_merge=1e-3, max_slit_angle=0.2, loop_resolution=64)


@pytest.fixture
def params():
    return FAST_PARAMS


@pytest.fixture
def stream():
    return StreamId(20240601)


@pytest.fixture
def engine(tmp_path):
    engine = create_engine(f"sqlite:///{tmp_path / 'reports.db'}", connect_args={"check_same_thread": False})
    init_db(bind=engine)
    yield engine
    engine.dispose()


@pytest.fixture
def db(engine):
    session = sessionmaker(autocommit=False, autoflush=False, bind=engine)()
    try:
        yield session
    finally:
        session.close()


@pytest.fixture
def client(engine):
    TestingSession = sessionmaker(autocommit=False, autoflush=False, bind=engine)

    def override_get_db():
        session = TestingSession()
        try:
            yield session
        finally:
            session.close()

    app.dependency_overrides[get_db] = override_get_db
    yield TestClient(app)
    app.dependency_overrides.clear()
