//! Closed-form fleet metrics: effective usable capacity, capacity cost and
//! capacity utilization.

use serde::Serialize;

use crate::instance::{EsbType, Instance, Node};
use crate::master::Plan;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("type {0} unusable at this radius (effective capacity {1:.3} kWh)")]
    Unusable(u32, f64),
    #[error("cost mix must be non-negative and sum to 1")]
    BadMix,
    #[error("average effective capacity is not positive")]
    Undefined,
    #[error("average travel time must be non-negative")]
    NegativeTravel,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricInputs {
    pub t_avg: f64,
    pub cost_mix: Vec<f64>,
    pub demand_increment: f64,
}

/// Battery energy left for discharging after an average out-and-back trip.
pub fn effective_usable_capacity(ty: &EsbType, t_avg: f64) -> Result<f64, MetricError> {
    if t_avg < 0.0 {
        return Err(MetricError::NegativeTravel);
    }
    let z = ty.cap_max - ty.cap_min - 2.0 * t_avg * ty.consumption_rate;
    if z < 0.0 {
        return Err(MetricError::Unusable(ty.id, z));
    }
    Ok(z)
}

/// Investment per kWh of effective usable capacity.
pub fn capacity_cost(ty: &EsbType, t_avg: f64) -> Result<f64, MetricError> {
    let z = effective_usable_capacity(ty, t_avg)?;
    if z <= 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok(ty.invest_cost / z)
}

/// Mix-weighted effective capacity and the utilization ratio it implies.
pub fn capacity_utilization(types: &[EsbType], m: &MetricInputs) -> Result<(f64, f64), MetricError> {
    if m.cost_mix.len() != types.len() || m.cost_mix.iter().any(|&r| r < 0.0) || (m.cost_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MetricError::BadMix);
    }
    let mut zbar = 0.0;
    for (ty, &r) in types.iter().zip(&m.cost_mix) {
        if r > 0.0 {
            zbar += r * effective_usable_capacity(ty, m.t_avg)?;
        }
    }
    if zbar <= 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok((zbar, m.demand_increment / zbar))
}

/// Mean travel time in hours from the depot and every station to the
/// shelters type `k` may serve.
pub fn t_avg(inst: &Instance, k: usize) -> f64 {
    let net = &inst.network;
    let mut sum = 0usize;
    let mut n = 0usize;
    for i in inst.shelters_of(k) {
        let origins = std::iter::once(Node::Depot).chain((0..inst.n_stations()).map(Node::Station));
        for o in origins {
            sum += net.travel(k, o, Node::Shelter(i));
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64 * inst.horizon.slot_hours()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TypeMetrics {
    pub id: u32,
    pub t_avg_hours: f64,
    pub effective_capacity: Option<f64>,
    pub capacity_cost: Option<f64>,
}

pub fn type_table(inst: &Instance) -> Vec<TypeMetrics> {
    inst.types
        .iter()
        .enumerate()
        .map(|(k, ty)| {
            let t = t_avg(inst, k);
            TypeMetrics { id: ty.id, t_avg_hours: t, effective_capacity: effective_usable_capacity(ty, t).ok(), capacity_cost: capacity_cost(ty, t).ok() }
        })
        .collect()
}

/// Delivered energy over the fleet's summed effective capacity.
pub fn plan_utilization(inst: &Instance, plan: &Plan) -> Result<f64, MetricError> {
    let mut cap = 0.0;
    let mut delivered = 0.0;
    for (r, n) in &plan.routes {
        let k = r.esb_type;
        cap += *n as f64 * effective_usable_capacity(&inst.types[k], t_avg(inst, k))?;
        delivered += *n as f64 * r.total_discharge();
    }
    if cap <= 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok(delivered / cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fleet() -> Vec<EsbType> {
        Instance::case_study().types
    }

    #[test]
    fn zero_travel_keeps_full_window() {
        for ty in fleet() {
            assert_eq!(effective_usable_capacity(&ty, 0.0).unwrap(), ty.cap_max - ty.cap_min);
        }
    }

    #[test]
    fn effective_capacity_by_hand() {
        let f = fleet();
        for (ty, want) in f.iter().zip([54.1014, 219.7476, 378.2028]) {
            let by_hand = ty.cap_max - ty.cap_min - 2.0 * 0.47 * ty.consumption_rate;
            assert!((by_hand - want).abs() < 1e-9);
            assert!((effective_usable_capacity(ty, 0.47).unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn capacity_cost_is_linear_in_investment() {
        let mut ty = fleet()[0].clone();
        let a = capacity_cost(&ty, 0.47).unwrap();
        ty.invest_cost *= 2.0;
        assert!((capacity_cost(&ty, 0.47).unwrap() - 2.0 * a).abs() < 1e-9);
    }

    #[test]
    fn unusable_type_is_flagged() {
        let ty = fleet()[0].clone();
        assert!(matches!(effective_usable_capacity(&ty, 5.0), Err(MetricError::Unusable(1, _))));
        assert!(capacity_cost(&ty, 5.0).is_err());
    }

    #[test]
    fn degenerate_mix_and_zero_increment() {
        let f = fleet();
        let m = MetricInputs { t_avg: 0.47, cost_mix: vec![0.0, 0.0, 1.0], demand_increment: 1000.0 };
        let (z, w) = capacity_utilization(&f, &m).unwrap();
        assert!((w - 1000.0 / z).abs() < 1e-12);
        let m0 = MetricInputs { demand_increment: 0.0, ..m };
        assert_eq!(capacity_utilization(&f, &m0).unwrap().1, 0.0);
        let bad = MetricInputs { t_avg: 0.47, cost_mix: vec![0.5, 0.6, 0.0], demand_increment: 1.0 };
        assert_eq!(capacity_utilization(&f, &bad), Err(MetricError::BadMix));
    }
}
