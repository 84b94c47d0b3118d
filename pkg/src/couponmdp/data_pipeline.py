"""Raw order/coupon logs to estimation records and redemption-ratio curves.

Reconstruction tracks each coupon's life cycle per traveler. A coupon sits in
the wallet from start_time until it expires or is redeemed; remaining
validity at a trip is T = floor((expire_time - trip_start)/day_unit), so T=0
means expiring today. Activation follows the payment-stage story: a coupon's
flag flips to 1 once some earlier trip redeemed a DIFFERENT coupon while this
one was in the wallet. Trips with an empty wallet are dropped from the output
but still count toward the traveler's trip rate and log-fare moments.

The traveler profile is lambda_hat = trips / window-days (clamped to 1 when
several trips share a day) and the ddof=0 moments of log fares.

redemption_ratio_curve aggregates the share of records that redeem, either
against the fare-value ratio p/v (width-0.2 bins labeled by their right
endpoint, so the point at 1.0 covers 0.8 <= p/v < 1.0) or against the wallet's
coupon count. The ratio axis only makes sense with one face value per record,
so it implies the single-coupon restriction. When both require_activated and
require_value_le_fare are set, one coupon must satisfy both at once.
Experience splits cut travelers by their record count, frequency splits by
lambda_hat, at caller-supplied quantiles.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .attention import AttentionState
from .coupon_core import DEFAULT_GROUP, make_coupon_set
from .errors import IntegrityError, ValidationError
from .estimation import TripRecord
from .value_engine import TravelerProfile

__all__ = [
    "OrderRecord",
    "CouponRecord",
    "IntegrityReport",
    "build_dataset",
    "redemption_ratio_curve",
    "CurveBin",
    "read_orders_csv",
    "read_coupons_csv",
    "write_curve_csv",
    "ORDER_COLUMNS",
    "COUPON_COLUMNS",
]

ORDER_COLUMNS = ("order_id", "traveler_id", "trip_start", "trip_end",
                 "fare", "used_coupon_id", "payment")
COUPON_COLUMNS = ("coupon_id", "traveler_id", "face_value",
                  "start_time", "expire_time")

RATIO_BIN_WIDTH = 0.2
PAYMENT_TOLERANCE = 0.01


@dataclass(frozen=True)
class OrderRecord:
    order_id: str
    traveler_id: str
    trip_start: datetime
    trip_end: datetime
    fare: float
    used_coupon_id: str | None
    payment: float

    def __post_init__(self):
        if self.trip_start > self.trip_end:
            raise ValidationError(f"order {self.order_id}: trip_start after trip_end")
        if not (self.fare > 0.0 and math.isfinite(self.fare)):
            raise ValidationError(f"order {self.order_id}: fare must be positive, got {self.fare}")
        if not (0.0 <= self.payment <= self.fare):
            raise ValidationError(
                f"order {self.order_id}: payment must lie in [0, fare], got {self.payment}")


@dataclass(frozen=True)
class CouponRecord:
    coupon_id: str
    traveler_id: str
    face_value: float
    start_time: datetime
    expire_time: datetime

    def __post_init__(self):
        if self.start_time > self.expire_time:
            raise ValidationError(f"coupon {self.coupon_id}: starts after it expires")
        if not (self.face_value > 0.0 and math.isfinite(self.face_value)):
            raise ValidationError(
                f"coupon {self.coupon_id}: face value must be positive, got {self.face_value}")


@dataclass
class IntegrityReport:
    warnings: list[str] = field(default_factory=list)
    dropped_empty_wallet: int = 0
    orders_outside_window: int = 0
    multi_trip_days: int = 0
    clamped_rates: int = 0
    orphan_coupons: int = 0

    def warn(self, message: str):
        self.warnings.append(message)

    def to_obj(self) -> dict:
        return {
            "warnings": list(self.warnings),
            "dropped_empty_wallet": self.dropped_empty_wallet,
            "orders_outside_window": self.orders_outside_window,
            "multi_trip_days": self.multi_trip_days,
            "clamped_rates": self.clamped_rates,
            "orphan_coupons": self.orphan_coupons,
        }


def build_dataset(orders, coupons, window_start: datetime, window_end: datetime,
                  day_unit: timedelta = timedelta(days=1)):
    """Reconstruct TripRecords from raw logs; returns (records, report).

    Orders outside [window_start, window_end) are ignored. A used coupon that
    is unknown, belongs to another traveler, or is not alive at the trip
    raises IntegrityError; softer anomalies land in the report.
    """
    if window_start >= window_end:
        raise ValidationError("window_start must precede window_end")
    if day_unit <= timedelta(0):
        raise ValidationError("day_unit must be a positive duration")

    report = IntegrityReport()
    by_id: dict[str, CouponRecord] = {}
    for c in coupons:
        if c.coupon_id in by_id:
            raise IntegrityError(f"duplicate coupon id {c.coupon_id!r}")
        by_id[c.coupon_id] = c

    wallets: dict[str, list[CouponRecord]] = {}
    for c in by_id.values():
        wallets.setdefault(c.traveler_id, []).append(c)

    seen_orders = set()
    trips: dict[str, list[OrderRecord]] = {}
    for o in orders:
        if o.order_id in seen_orders:
            raise IntegrityError(f"duplicate order id {o.order_id!r}")
        seen_orders.add(o.order_id)
        if not (window_start <= o.trip_start < window_end):
            report.orders_outside_window += 1
            continue
        trips.setdefault(o.traveler_id, []).append(o)

    active_travelers = set(trips)
    for c in by_id.values():
        if c.traveler_id not in active_travelers:
            report.orphan_coupons += 1
            report.warn(f"coupon {c.coupon_id} belongs to traveler "
                        f"{c.traveler_id} with no trips in the window")

    window_days = (window_end - window_start) / day_unit
    records = []
    for traveler_id in sorted(trips):
        orders_t = sorted(trips[traveler_id], key=lambda o: (o.trip_start, o.order_id))
        wallet = wallets.get(traveler_id, [])

        rate = len(orders_t) / window_days
        if rate > 1.0:
            report.clamped_rates += 1
            report.warn(f"traveler {traveler_id}: trip rate {rate:.3f} clamped to 1")
            rate = 1.0
        log_fares = np.log([o.fare for o in orders_t])
        profile = TravelerProfile(rate, float(log_fares.mean()),
                                  float(log_fares.std()))

        day_seen = set()
        used = set()
        flags = {c.coupon_id: 0 for c in wallet}
        for o in orders_t:
            day = (o.trip_start - window_start) // day_unit
            if day in day_seen:
                report.multi_trip_days += 1
                report.warn(f"traveler {traveler_id}: extra same-day trip {o.order_id}")
            day_seen.add(day)

            alive = [c for c in wallet
                     if c.coupon_id not in used
                     and c.start_time <= o.trip_start <= c.expire_time]
            redeemed = None
            if o.used_coupon_id is not None:
                redeemed = by_id.get(o.used_coupon_id)
                if redeemed is None:
                    raise IntegrityError(
                        f"order {o.order_id} redeems unknown coupon {o.used_coupon_id!r}")
                if redeemed.traveler_id != traveler_id:
                    raise IntegrityError(
                        f"order {o.order_id} redeems coupon {o.used_coupon_id!r} "
                        f"of another traveler")
                if redeemed.coupon_id not in {c.coupon_id for c in alive}:
                    raise IntegrityError(
                        f"order {o.order_id} redeems coupon {o.used_coupon_id!r} "
                        f"not alive at the trip")
                expected = o.fare - min(redeemed.face_value, o.fare)
            else:
                expected = o.fare
            if abs(o.payment - expected) > PAYMENT_TOLERANCE:
                report.warn(f"order {o.order_id}: payment {o.payment} differs "
                            f"from fare minus redemption {expected:.2f}")

            if not alive:
                report.dropped_empty_wallet += 1
                continue

            def group_key(c: CouponRecord):
                return (c.face_value, int((c.expire_time - o.trip_start) // day_unit))

            counts = Counter(group_key(c) for c in alive)
            C = make_coupon_set([(v, T, n) for (v, T), n in counts.items()])
            flag_rows = {}
            for c in alive:
                key = group_key(c)
                flag_rows[key] = max(flag_rows.get(key, 0), flags[c.coupon_id])
            S_a = AttentionState(tuple((v, T, f) for (v, T), f in flag_rows.items()))
            chosen = C.find(*group_key(redeemed)) if redeemed is not None else DEFAULT_GROUP
            records.append(TripRecord(traveler_id, o.fare, chosen, C, S_a, profile))

            if redeemed is not None:
                used.add(redeemed.coupon_id)
                for c in alive:
                    if c.coupon_id != redeemed.coupon_id:
                        flags[c.coupon_id] = 1
    return records, report


# ---------------------------------------------------------------- curves

@dataclass(frozen=True)
class CurveBin:
    bin: float
    ratio: float
    count: int


def _segments(dataset, measure, quantiles, segment):
    """Traveler ids in the requested quantile segment of the measure."""
    cuts = [float(q) for q in quantiles]
    if not cuts or sorted(cuts) != cuts or cuts[0] <= 0.0 or cuts[-1] >= 1.0:
        raise ValidationError(f"quantiles must be ascending inside (0, 1), got {quantiles}")
    if not (0 <= segment <= len(cuts)):
        raise ValidationError(f"segment must lie in [0, {len(cuts)}], got {segment}")
    values = {}
    for rec in dataset:
        values.setdefault(rec.traveler_id, measure(rec))
    edges = np.quantile(list(values.values()), cuts)
    return {tid for tid, m in values.items()
            if int(np.searchsorted(edges, m, side="right")) == segment}


def redemption_ratio_curve(dataset, axis: str, *,
                           single_coupon: bool = False,
                           require_activated: bool = False,
                           require_value_le_fare: bool = False,
                           experience_quantiles=None, experience_segment=None,
                           frequency_quantiles=None, frequency_segment=None):
    """Per-bin share of records that redeem; returns sorted CurveBin rows."""
    if axis not in ("fare_value_ratio", "coupon_quantity"):
        raise ValidationError(f"unknown curve axis {axis!r}")
    if (experience_quantiles is None) != (experience_segment is None):
        raise ValidationError("experience split needs both quantiles and a segment")
    if (frequency_quantiles is None) != (frequency_segment is None):
        raise ValidationError("frequency split needs both quantiles and a segment")

    dataset = list(dataset)
    keep_ids = None
    if experience_quantiles is not None:
        counts = Counter(r.traveler_id for r in dataset)
        keep_ids = _segments(dataset, lambda r: counts[r.traveler_id],
                             experience_quantiles, experience_segment)
    if frequency_quantiles is not None:
        ids = _segments(dataset, lambda r: r.profile.lambda_hat,
                        frequency_quantiles, frequency_segment)
        keep_ids = ids if keep_ids is None else keep_ids & ids

    tally: dict[float, list[int]] = {}
    for rec in dataset:
        if keep_ids is not None and rec.traveler_id not in keep_ids:
            continue
        groups = rec.coupon_set.non_default
        n_coupons = sum(g.n for g in groups)
        if (single_coupon or axis == "fare_value_ratio") and n_coupons != 1:
            continue
        if require_activated and require_value_le_fare:
            if not any(rec.attention.get(g) == 1 and g.v <= rec.fare for g in groups):
                continue
        elif require_activated:
            if not any(rec.attention.get(g) == 1 for g in groups):
                continue
        elif require_value_le_fare:
            if not any(g.v <= rec.fare for g in groups):
                continue

        if axis == "fare_value_ratio":
            ratio = rec.fare / groups[0].v
            # round before flooring so exact bin edges land on the right side
            idx = int(math.floor(round(ratio / RATIO_BIN_WIDTH, 9)))
            label = round(RATIO_BIN_WIDTH * (idx + 1), 10)
        else:
            label = n_coupons
        hit = tally.setdefault(label, [0, 0])
        hit[0] += rec.redeemed
        hit[1] += 1

    return [CurveBin(b, hits / total, total)
            for b, (hits, total) in sorted(tally.items())]


# ------------------------------------------------------------------ CSV io

def _parse_time(text: str, where: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValidationError(f"{where}: bad timestamp {text!r}") from exc


def read_orders_csv(path) -> list[OrderRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(ORDER_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"orders CSV missing columns {sorted(missing)}")
        out = []
        for i, row in enumerate(reader, start=2):
            where = f"orders row {i}"
            try:
                used = row["used_coupon_id"].strip()
                out.append(OrderRecord(
                    order_id=row["order_id"].strip(),
                    traveler_id=row["traveler_id"].strip(),
                    trip_start=_parse_time(row["trip_start"], where),
                    trip_end=_parse_time(row["trip_end"], where),
                    fare=float(row["fare"]),
                    used_coupon_id=used or None,
                    payment=float(row["payment"]),
                ))
            except (TypeError, AttributeError, ValueError) as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise ValidationError(f"{where}: {exc}") from exc
    return out


def read_coupons_csv(path) -> list[CouponRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COUPON_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"coupons CSV missing columns {sorted(missing)}")
        out = []
        for i, row in enumerate(reader, start=2):
            where = f"coupons row {i}"
            try:
                out.append(CouponRecord(
                    coupon_id=row["coupon_id"].strip(),
                    traveler_id=row["traveler_id"].strip(),
                    face_value=float(row["face_value"]),
                    start_time=_parse_time(row["start_time"], where),
                    expire_time=_parse_time(row["expire_time"], where),
                ))
            except (TypeError, AttributeError, ValueError) as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise ValidationError(f"{where}: {exc}") from exc
    return out


def write_curve_csv(path, axis: str, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("axis", "bin", "ratio", "count"))
        for row in rows:
            label = repr(float(row.bin)) if axis == "fare_value_ratio" else int(row.bin)
            writer.writerow((axis, label, repr(row.ratio), row.count))
