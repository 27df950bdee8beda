"""Shared builders for tests (importable, unlike fixtures)."""

from datetime import datetime, timedelta, timezone

from pcm.event_log import Event, Trace

T0 = datetime(2024, 3, 4, 9, 0, tzinfo=timezone.utc)
HOUR = 3600.0


def make_trace(case_id, steps, attrs=None, t0=T0):
    """Trace from (activity, hours-after-t0) pairs; ``attrs`` maps event index to attributes."""
    attrs = attrs or {}
    events = [
        Event(a, case_id, t0 + timedelta(hours=h), dict(attrs.get(i, {})))
        for i, (a, h) in enumerate(steps)
    ]
    return Trace.from_events(case_id, events)


# Hand-encoded running example: o2c cases against "ship within 24h of confirm".
# case 1 ships 53h after confirmation; cases 2 and 3 comply; case 4 is cancelled.
RUNNING_EXAMPLE_LOG = """\
case_id,activity,timestamp,priority
1,receive PO,2023-05-01T08:00:00Z,high
1,confirm order,2023-05-01T09:30:00Z,high
1,ship goods,2023-05-03T14:30:00Z,high
1,send invoice,2023-05-03T16:00:00Z,high
1,receive payment,2023-05-10T10:00:00Z,high
2,receive PO,2023-05-02T10:00:00Z,low
2,confirm order,2023-05-02T11:00:00Z,low
2,ship goods,2023-05-02T20:00:00Z,low
2,send invoice,2023-05-03T09:00:00Z,low
2,receive payment,2023-05-08T12:00:00Z,low
3,receive PO,2023-05-02T12:00:00Z,high
3,confirm order,2023-05-02T13:00:00Z,high
3,ship goods,2023-05-03T13:00:00Z,high
3,send invoice,2023-05-03T15:00:00Z,high
3,receive payment,2023-05-09T09:00:00Z,high
4,receive PO,2023-05-04T07:00:00Z,low
4,cancel order,2023-05-04T09:00:00Z,low
"""
RUNNING_EXAMPLE_CONSTRAINT = """\
id = o2c_1
anchor = confirm order
target = ship goods
pattern = max_distance
bound = 24h
"""
# case_id -> (label, magnitude in hours, cut length)
RUNNING_EXAMPLE_EXPECTED = {"1": (1, 29, 2), "2": (0, 0, 2), "3": (0, 0, 2), "4": (0, 0, 2)}
