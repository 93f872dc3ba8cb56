//! Intra-enterprise production planning on unit-capacity cells.
//!
//! One scheduling core serves three policy flavors: plain list scheduling
//! with earliest-due-date priority ([`PlannerPolicy::Discrete`]), the same
//! with component arrival precedence ([`PlannerPolicy::Assembly`]) and lot
//! formation ahead of scheduling ([`PlannerPolicy::Batch`]).
//!
//! Each operation is inserted into the earliest gap of every eligible cell
//! and lands on the cell where it finishes first; ties go to the lower cell id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cents, OrderId, ProductId, Tick};

pub type CellId = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no routing for product `{0}`")]
    NoRouting(ProductId),
    #[error("operation `{operation}` of `{product}` cannot be scheduled on any cell")]
    Infeasible { product: ProductId, operation: String },
    #[error("unknown disruption target `{0}`")]
    UnknownTarget(String),
    #[error("invalid planner configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationSpec {
    pub id: String,
    pub eligible_cells: BTreeSet<CellId>,
    pub unit_time: u32,
    #[serde(default)]
    pub setup_time: u32,
    pub cost_rate: Cents,
}

impl OperationSpec {
    pub fn duration(&self, quantity: u32) -> Tick {
        Tick::from(self.setup_time) + Tick::from(self.unit_time) * Tick::from(quantity)
    }

    pub fn cost(&self, quantity: u32) -> Cents {
        self.duration(quantity) as Cents * self.cost_rate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    pub product: ProductId,
    pub operations: Vec<OperationSpec>,
}

/// Half-open tick interval `[start, end)`. `end == Tick::MAX` never ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: Tick,
    pub end: Tick,
}

impl Interval {
    pub fn new(start: Tick, end: Tick) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> Tick {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn overlap_len(&self, other: &Interval) -> Tick {
        let s = self.start.max(other.start);
        let e = self.end.min(other.end);
        e.saturating_sub(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Booking {
    pub interval: Interval,
    /// Job the booking belongs to (lot lead order for batches).
    pub order: OrderId,
    pub op_index: usize,
    pub operation: String,
    pub quantity: u32,
    pub due: Tick,
    pub cost: Cents,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductionCell {
    pub id: CellId,
    /// Downtime intervals.
    pub calendar: Vec<Interval>,
    /// Sorted by start; pairwise disjoint and disjoint from downtime.
    pub bookings: Vec<Booking>,
}

impl ProductionCell {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Self::default()
        }
    }

    fn busy(&self) -> Vec<Interval> {
        let mut busy: Vec<Interval> = self
            .calendar
            .iter()
            .copied()
            .chain(self.bookings.iter().map(|b| b.interval))
            .filter(|i| !i.is_empty())
            .collect();
        busy.sort();
        busy
    }

    /// Earliest start `>= earliest` of a gap of length `duration`, or `None`
    /// if no such gap exists before a permanent block.
    pub fn earliest_slot(&self, earliest: Tick, duration: Tick) -> Option<Tick> {
        let mut t = earliest;
        for b in self.busy() {
            if b.end <= t {
                continue;
            }
            if t.checked_add(duration)? <= b.start {
                return Some(t);
            }
            t = t.max(b.end);
            if t == Tick::MAX {
                return None;
            }
        }
        t.checked_add(duration).map(|_| t)
    }

    fn insert(&mut self, booking: Booking) {
        let pos = self
            .bookings
            .partition_point(|b| b.interval.start <= booking.interval.start);
        self.bookings.insert(pos, booking);
    }
}

/// A unit of work handed to the planner: one order, or one lot of orders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub order: OrderId,
    pub product: ProductId,
    pub quantity: u32,
    pub due: Tick,
    pub release: Tick,
    /// Latest component delivery; honoured by the assembly policy.
    #[serde(default)]
    pub components_ready: Tick,
    /// Orders served by this job; `[order]` unless it is a lot.
    pub members: Vec<OrderId>,
    /// First operation still to plan (non-zero when replanning a started job).
    #[serde(default)]
    pub from_op: usize,
}

impl Job {
    pub fn new(order: impl Into<String>, product: impl Into<String>, quantity: u32, due: Tick, release: Tick) -> Self {
        let order = OrderId::new(order);
        Self {
            members: vec![order.clone()],
            order,
            product: ProductId::new(product),
            quantity,
            due,
            release,
            components_ready: 0,
            from_op: 0,
        }
    }

    pub fn with_components_ready(mut self, t: Tick) -> Self {
        self.components_ready = t;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlannerPolicy {
    Discrete,
    Assembly,
    Batch { window: Tick, max_lot: u32 },
}

impl PlannerPolicy {
    pub fn validate(&self) -> Result<(), PlanError> {
        match self {
            PlannerPolicy::Batch { max_lot: 0, .. } => {
                Err(PlanError::Invalid("max_lot must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One exported schedule line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub cell: CellId,
    pub order: OrderId,
    pub operation: String,
    pub start: Tick,
    pub end: Tick,
    pub cost: Cents,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub rows: Vec<ScheduleRow>,
    /// Completion per member order.
    pub completion: BTreeMap<OrderId, Tick>,
    /// Cost per job.
    pub cost: BTreeMap<OrderId, Cents>,
    /// Jobs (lots) as planned.
    pub jobs: Vec<Job>,
}

impl Schedule {
    pub fn makespan(&self) -> Tick {
        self.rows.iter().map(|r| r.end).max().unwrap_or(0)
    }

    pub fn rows_for(&self, order: &OrderId) -> Vec<ScheduleRow> {
        self.rows.iter().filter(|r| &r.order == order).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub horizon: Interval,
    pub utilization: BTreeMap<CellId, f64>,
    /// Scheduled completion of every registered job.
    pub completion: BTreeMap<OrderId, Tick>,
}

impl LoadReport {
    pub fn mean_utilization(&self) -> f64 {
        if self.utilization.is_empty() {
            0.0
        } else {
            self.utilization.values().sum::<f64>() / self.utilization.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub start: Tick,
    pub completion: Tick,
    pub cost: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disruption {
    CellDown { cell: CellId, interval: Interval },
    ComponentLate { order: OrderId, ready_at: Tick },
}

/// Planning state of one enterprise: cells, routings and committed jobs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shop {
    pub cells: BTreeMap<CellId, ProductionCell>,
    pub routings: BTreeMap<ProductId, Routing>,
    pub jobs: BTreeMap<OrderId, Job>,
}

impl Shop {
    pub fn new(cells: impl IntoIterator<Item = CellId>, routings: impl IntoIterator<Item = Routing>) -> Self {
        Self {
            cells: cells
                .into_iter()
                .map(|c| (c.clone(), ProductionCell::new(c)))
                .collect(),
            routings: routings.into_iter().map(|r| (r.product.clone(), r)).collect(),
            jobs: BTreeMap::new(),
        }
    }

    pub fn routing(&self, product: &ProductId) -> Result<&Routing, PlanError> {
        self.routings
            .get(product)
            .ok_or_else(|| PlanError::NoRouting(product.clone()))
    }

    pub fn add_downtime(&mut self, cell: &str, interval: Interval) -> Result<(), PlanError> {
        let c = self
            .cells
            .get_mut(cell)
            .ok_or_else(|| PlanError::UnknownTarget(cell.to_string()))?;
        c.calendar.push(interval);
        c.calendar.sort();
        Ok(())
    }

    /// Best placement `(cell, start)` for one operation: earliest finish,
    /// ties by ascending cell id.
    fn place(&self, product: &ProductId, op: &OperationSpec, earliest: Tick, duration: Tick) -> Result<(CellId, Tick), PlanError> {
        let mut best: Option<(Tick, CellId, Tick)> = None;
        for cell_id in &op.eligible_cells {
            let Some(cell) = self.cells.get(cell_id) else { continue };
            let Some(start) = cell.earliest_slot(earliest, duration) else { continue };
            let finish = start + duration;
            if best.as_ref().map_or(true, |(f, _, _)| finish < *f) {
                best = Some((finish, cell_id.clone(), start));
            }
        }
        best.map(|(_, c, s)| (c, s)).ok_or_else(|| PlanError::Infeasible {
            product: product.clone(),
            operation: op.id.clone(),
        })
    }

    /// Greedily inserts a job's remaining operations and returns the rows.
    fn insert_job(&mut self, job: &Job, earliest: Tick) -> Result<Vec<ScheduleRow>, PlanError> {
        let routing = self.routing(&job.product)?.clone();
        let mut t = earliest;
        let mut rows = Vec::new();
        for (k, op) in routing.operations.iter().enumerate().skip(job.from_op) {
            let duration = op.duration(job.quantity);
            let (cell, start) = self.place(&job.product, op, t, duration)?;
            let end = start + duration;
            let cost = op.cost(job.quantity);
            self.cells.get_mut(&cell).expect("placed on known cell").insert(Booking {
                interval: Interval::new(start, end),
                order: job.order.clone(),
                op_index: k,
                operation: op.id.clone(),
                quantity: job.quantity,
                due: job.due,
                cost,
            });
            rows.push(ScheduleRow {
                cell,
                order: job.order.clone(),
                operation: op.id.clone(),
                start,
                end,
                cost,
            });
            t = end;
        }
        Ok(rows)
    }

    /// Commits a planned schedule.
    pub fn commit(&mut self, schedule: &Schedule) {
        for row in &schedule.rows {
            let job = schedule.jobs.iter().find(|j| j.order == row.order);
            let op_index = job
                .and_then(|j| self.routings.get(&j.product))
                .and_then(|r| r.operations.iter().position(|o| o.id == row.operation))
                .unwrap_or(0);
            if let Some(cell) = self.cells.get_mut(&row.cell) {
                cell.insert(Booking {
                    interval: Interval::new(row.start, row.end),
                    order: row.order.clone(),
                    op_index,
                    operation: row.operation.clone(),
                    quantity: job.map_or(0, |j| j.quantity),
                    due: job.map_or(0, |j| j.due),
                    cost: row.cost,
                });
            }
        }
        for j in &schedule.jobs {
            let mut j = j.clone();
            j.from_op = 0;
            self.jobs.insert(j.order.clone(), j);
        }
    }

    /// Removes every booking of `order` that has not started by `now`, and
    /// forgets the job if nothing of it remains.
    pub fn release_job(&mut self, order: &OrderId, now: Tick) {
        for cell in self.cells.values_mut() {
            cell.bookings
                .retain(|b| &b.order != order || b.interval.start < now);
        }
        if self.bookings_of(order).next().is_none() {
            self.jobs.remove(order);
        }
    }

    pub fn bookings_of<'a>(&'a self, order: &'a OrderId) -> impl Iterator<Item = (&'a CellId, &'a Booking)> + 'a {
        self.cells
            .iter()
            .flat_map(|(id, c)| c.bookings.iter().map(move |b| (id, b)))
            .filter(move |(_, b)| &b.order == order)
    }

    /// Exported view of all bookings, sorted by `(start, cell)`.
    pub fn schedule(&self) -> Schedule {
        let mut rows: Vec<ScheduleRow> = self
            .cells
            .iter()
            .flat_map(|(id, c)| {
                c.bookings.iter().map(move |b| ScheduleRow {
                    cell: id.clone(),
                    order: b.order.clone(),
                    operation: b.operation.clone(),
                    start: b.interval.start,
                    end: b.interval.end,
                    cost: b.cost,
                })
            })
            .collect();
        rows.sort_by(|a, b| (a.start, &a.cell).cmp(&(b.start, &b.cell)));
        let mut completion = BTreeMap::new();
        let mut cost = BTreeMap::new();
        for r in &rows {
            *cost.entry(r.order.clone()).or_insert(0) += r.cost;
        }
        for job in self.jobs.values() {
            if let Some(end) = self.completion_of(&job.order) {
                for m in &job.members {
                    completion.insert(m.clone(), end);
                }
            }
        }
        Schedule {
            rows,
            completion,
            cost,
            jobs: self.jobs.values().cloned().collect(),
        }
    }

    /// End of the last booked operation of a job.
    pub fn completion_of(&self, order: &OrderId) -> Option<Tick> {
        self.bookings_of(order).map(|(_, b)| b.interval.end).max()
    }

    pub fn start_of(&self, order: &OrderId) -> Option<Tick> {
        self.bookings_of(order).map(|(_, b)| b.interval.start).min()
    }

    /// Overlap check over every cell; used by tests and debug assertions.
    pub fn is_consistent(&self) -> bool {
        self.cells.values().all(|c| {
            let mut iv: Vec<Interval> = c.bookings.iter().map(|b| b.interval).collect();
            iv.sort();
            let disjoint = iv.windows(2).all(|w| w[0].end <= w[1].start);
            let clear = c
                .bookings
                .iter()
                .all(|b| c.calendar.iter().all(|d| !d.overlaps(&b.interval)));
            disjoint && clear
        })
    }

    /// Stable digest of the whole state, used to check that quoting is pure.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("shop serializes")
    }
}

/// Completion time and cost of making `quantity` units of `product`,
/// starting no earlier than `earliest_start`, against the current bookings.
/// Nothing is reserved.
pub fn quote(shop: &Shop, product: &ProductId, quantity: u32, earliest_start: Tick) -> Result<Quote, PlanError> {
    let routing = shop.routing(product)?;
    if quantity == 0 {
        return Ok(Quote {
            start: earliest_start,
            completion: earliest_start,
            cost: 0,
        });
    }
    let mut t = earliest_start;
    let mut start = None;
    let mut cost = 0;
    for op in &routing.operations {
        let duration = op.duration(quantity);
        let (_, s) = shop.place(product, op, t, duration)?;
        start.get_or_insert(s);
        t = s + duration;
        cost += op.cost(quantity);
    }
    Ok(Quote {
        start: start.unwrap_or(earliest_start),
        completion: t,
        cost,
    })
}

/// Per-cell utilization over `horizon`: booked ticks / non-downtime ticks.
/// A cell with no available ticks reports 1.0.
pub fn estimate_load(horizon: Interval, shop: &Shop) -> LoadReport {
    let utilization = shop
        .cells
        .iter()
        .map(|(id, cell)| {
            let down = downtime_within(&cell.calendar, horizon);
            let available = horizon.len().saturating_sub(down);
            let booked: Tick = cell.bookings.iter().map(|b| b.interval.overlap_len(&horizon)).sum();
            let u = if available == 0 {
                1.0
            } else {
                (booked as f64 / available as f64).min(1.0)
            };
            (id.clone(), u)
        })
        .collect();
    let mut completion: BTreeMap<OrderId, Tick> = BTreeMap::new();
    for b in shop.cells.values().flat_map(|c| &c.bookings) {
        if shop.jobs.contains_key(&b.order) {
            let e = completion.entry(b.order.clone()).or_insert(b.interval.end);
            *e = (*e).max(b.interval.end);
        }
    }
    LoadReport {
        horizon,
        utilization,
        completion,
    }
}

fn downtime_within(calendar: &[Interval], horizon: Interval) -> Tick {
    // Downtime intervals may overlap each other; merge before counting.
    let mut iv: Vec<Interval> = calendar.iter().copied().collect();
    iv.sort();
    let mut total = 0;
    let mut cur: Option<Interval> = None;
    for i in iv {
        match cur.as_mut() {
            Some(c) if i.start <= c.end => c.end = c.end.max(i.end),
            _ => {
                if let Some(c) = cur.take() {
                    total += c.overlap_len(&horizon);
                }
                cur = Some(i);
            }
        }
    }
    if let Some(c) = cur {
        total += c.overlap_len(&horizon);
    }
    total
}

/// Greedy lot formation: per product, in `(release, order)` order, orders
/// join the open lot while their release is within `window` of the lot's
/// first release and the lot stays within `max_lot`. Orders are never
/// split; a single order larger than `max_lot` forms its own lot.
pub fn form_lots(jobs: &[Job], window: Tick, max_lot: u32) -> Vec<Job> {
    let mut by_product: BTreeMap<&ProductId, Vec<&Job>> = BTreeMap::new();
    for j in jobs {
        by_product.entry(&j.product).or_default().push(j);
    }
    let mut lots = Vec::new();
    for (_, mut js) in by_product {
        js.sort_by(|a, b| (a.release, &a.order).cmp(&(b.release, &b.order)));
        let mut open: Option<(Tick, Job)> = None;
        for j in js {
            if let Some((first, lot)) = open.as_mut() {
                if j.release - *first <= window && lot.quantity + j.quantity <= max_lot {
                    lot.quantity += j.quantity;
                    lot.due = lot.due.min(j.due);
                    lot.release = lot.release.max(j.release);
                    lot.components_ready = lot.components_ready.max(j.components_ready);
                    lot.members.extend(j.members.iter().cloned());
                    continue;
                }
                lots.push(open.take().expect("open lot").1);
            }
            open = Some((j.release, j.clone()));
        }
        if let Some((_, lot)) = open {
            lots.push(lot);
        }
    }
    lots
}

/// Plans `jobs` on top of the current bookings of `shop` without mutating it.
pub fn plan(jobs: &[Job], policy: PlannerPolicy, shop: &Shop) -> Result<Schedule, PlanError> {
    policy.validate()?;
    let mut work: Vec<Job> = match policy {
        PlannerPolicy::Batch { window, max_lot } => form_lots(jobs, window, max_lot),
        _ => jobs.to_vec(),
    };
    work.sort_by(|a, b| (a.due, &a.order).cmp(&(b.due, &b.order)));
    let mut scratch = shop.clone();
    let mut schedule = Schedule::default();
    for job in &work {
        let earliest = match policy {
            PlannerPolicy::Assembly => job.release.max(job.components_ready),
            _ => job.release,
        };
        let rows = scratch.insert_job(job, earliest)?;
        let end = rows.last().map_or(earliest, |r| r.end);
        for m in &job.members {
            schedule.completion.insert(m.clone(), end);
        }
        schedule
            .cost
            .insert(job.order.clone(), rows.iter().map(|r| r.cost).sum());
        schedule.rows.extend(rows);
    }
    schedule.jobs = work;
    Ok(schedule)
}

/// Applies a disruption and replans the unfinished work it touches.
///
/// Bookings finished by `now` never move. Bookings that have not started,
/// or that are running and collide with new downtime, are removed for the
/// affected jobs and for every job sharing a cell with removed work, and
/// the remainder is replanned by [`plan`]. Lots are replanned as formed.
pub fn reschedule(shop: &Shop, disruption: &Disruption, policy: PlannerPolicy, now: Tick) -> Result<Shop, PlanError> {
    let mut next = shop.clone();
    let mut seeds: BTreeSet<OrderId> = BTreeSet::new();
    let mut down: Option<(CellId, Interval)> = None;
    match disruption {
        Disruption::CellDown { cell, interval } => {
            next.add_downtime(cell, *interval)?;
            let c = &next.cells[cell];
            seeds.extend(
                c.bookings
                    .iter()
                    .filter(|b| b.interval.end > now && b.interval.overlaps(interval))
                    .map(|b| b.order.clone()),
            );
            down = Some((cell.clone(), *interval));
        }
        Disruption::ComponentLate { order, ready_at } => {
            let job = next
                .jobs
                .get_mut(order)
                .ok_or_else(|| PlanError::UnknownTarget(order.to_string()))?;
            job.components_ready = job.components_ready.max(*ready_at);
            job.release = job.release.max(*ready_at);
            // Work already under way is not pulled back.
            if next.bookings_of(order).any(|(_, b)| b.interval.start < now) {
                return Ok(next);
            }
            seeds.insert(order.clone());
        }
    }
    if seeds.is_empty() {
        return Ok(next);
    }

    let removable = |b: &Booking, cell: &CellId| -> bool {
        if b.interval.start >= now {
            return true;
        }
        b.interval.end > now
            && down
                .as_ref()
                .is_some_and(|(c, d)| c == cell && d.overlaps(&b.interval))
    };

    // Close over jobs that share a cell with removable work of the set.
    let mut set = seeds;
    loop {
        let cells: BTreeSet<CellId> = next
            .cells
            .iter()
            .filter(|(id, c)| c.bookings.iter().any(|b| set.contains(&b.order) && removable(b, id)))
            .map(|(id, _)| id.clone())
            .collect();
        let grown: BTreeSet<OrderId> = cells
            .iter()
            .flat_map(|id| next.cells[id].bookings.iter().filter(|b| removable(b, id)).map(|b| b.order.clone()))
            .chain(set.iter().cloned())
            .collect();
        if grown.len() == set.len() {
            break;
        }
        set = grown;
    }

    let mut jobs = Vec::new();
    for order in &set {
        let Some(job) = next.jobs.get(order).cloned() else { continue };
        let mut kept_until = None;
        let mut first_removed = None;
        for (id, cell) in next.cells.iter_mut() {
            cell.bookings.retain(|b| {
                if &b.order != order {
                    return true;
                }
                if removable(b, id) {
                    first_removed = Some(first_removed.map_or(b.op_index, |k: usize| k.min(b.op_index)));
                    false
                } else {
                    kept_until = Some(kept_until.map_or(b.interval.end, |t: Tick| t.max(b.interval.end)));
                    true
                }
            });
        }
        let Some(from_op) = first_removed else { continue };
        let mut j = job;
        j.from_op = from_op;
        j.release = j.release.max(now).max(kept_until.unwrap_or(0));
        jobs.push(j);
    }
    let core = match policy {
        PlannerPolicy::Batch { .. } => PlannerPolicy::Discrete,
        p => p,
    };
    let schedule = plan(&jobs, core, &next)?;
    for row in &schedule.rows {
        let job = jobs.iter().find(|j| j.order == row.order).expect("planned job");
        let op_index = next.routings[&job.product]
            .operations
            .iter()
            .position(|o| o.id == row.operation)
            .unwrap_or(0);
        next.cells.get_mut(&row.cell).expect("known cell").insert(Booking {
            interval: Interval::new(row.start, row.end),
            order: row.order.clone(),
            op_index,
            operation: row.operation.clone(),
            quantity: job.quantity,
            due: job.due,
            cost: row.cost,
        });
    }
    for j in jobs {
        if let Some(stored) = next.jobs.get_mut(&j.order) {
            stored.release = j.release.max(stored.release);
        }
    }
    Ok(next)
}
