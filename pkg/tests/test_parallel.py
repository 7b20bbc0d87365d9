import pytest

from geofuse import ParameterError
from geofuse.parallel import THREADS_ENV, map_ordered, row_bands, thread_count


def test_thread_count_from_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv(THREADS_ENV, "3")
    assert thread_count() == 3
    monkeypatch.delenv(THREADS_ENV)
    assert 1 <= thread_count() <= 8


@pytest.mark.parametrize("raw", ["0", "-2", "many", "1.5"])
def test_thread_count_rejects_invalid(
    monkeypatch: pytest.MonkeyPatch, raw: str
) -> None:
    monkeypatch.setenv(THREADS_ENV, raw)
    with pytest.raises(ParameterError):
        thread_count()


def test_map_ordered_keeps_order(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv(THREADS_ENV, "4")
    assert map_ordered(lambda x: x * x, list(range(50))) == [x * x for x in range(50)]


def test_row_bands_cover_rows() -> None:
    assert row_bands(10, 3) == [(0, 4), (4, 8), (8, 10)]
    assert row_bands(2, 8) == [(0, 1), (1, 2)]
