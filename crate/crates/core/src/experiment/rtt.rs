//! Week-long round-trip probes on every configured link.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{details, handler_error, mean, Analysis, Check, ExperimentConfig, ExperimentError, Table};
use crate::domain::Seconds;
use crate::latency::{chi_square_homogeneity, DiurnalProfile, Histogram, LinkKind, SegmentStreams};
use crate::sim::{Engine, EventTrace, RngStreams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum RttEvent {
    Probe { k: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sample {
    series: String,
    link: LinkKind,
    /// Server to station and back.
    network: Seconds,
    /// Network plus the meter read.
    total: Seconds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProbeDetail {
    k: u64,
    hour_of_week: usize,
    samples: Vec<Sample>,
}

const DAY: Seconds = 86_400.0;

/// (t, network, total)
type Point = (Seconds, f64, f64);

fn series(config: &ExperimentConfig) -> Vec<(String, LinkKind)> {
    let mut s: Vec<(String, LinkKind)> = config.rtt.links.iter().map(|&l| (l.name().to_string(), l)).collect();
    for i in 0..config.rtt.location_replicas {
        s.push((format!("3g_location{i}"), LinkKind::ThreeG));
    }
    s
}

pub(super) fn simulate(config: &ExperimentConfig) -> Result<EventTrace, ExperimentError> {
    let streams = RngStreams::new(config.seed);
    let models = &config.links;
    let mut probes: Vec<(String, LinkKind, SegmentStreams)> = series(config)
        .into_iter()
        .map(|(name, link)| {
            let rng = SegmentStreams::derive(&streams, &format!("rtt/{name}"));
            (name, link, rng)
        })
        .collect();
    let mut engine: Engine<RttEvent> = Engine::new(config.seed, config.digest());
    engine.schedule_at(0.0, RttEvent::Probe { k: 0 })?;
    let interval = config.probe_interval;
    let duration = config.duration;
    engine.run_until(duration, |sched, ev| {
        let RttEvent::Probe { k } = ev.payload;
        let t = ev.at;
        let samples = probes
            .iter_mut()
            .map(|(name, link, rng)| {
                let network = models.t_server_cloud + models.t_cloud + models.uplink(*link).sample(&mut rng.uplink, t);
                let metering = models.metering.sample(&mut rng.metering, t);
                Sample {
                    series: name.clone(),
                    link: *link,
                    network,
                    total: network + metering,
                }
            })
            .collect();
        let next = (k + 1) as f64 * interval;
        if next < duration {
            sched.schedule_at(next, RttEvent::Probe { k: k + 1 }).map_err(handler_error)?;
        }
        serde_json::to_value(ProbeDetail {
            k,
            hour_of_week: DiurnalProfile::hour_of_week(t),
            samples,
        })
        .map_err(handler_error)
    })?;
    Ok(engine.into_trace())
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

pub(super) fn analyze(config: &ExperimentConfig, trace: &EventTrace) -> Result<Analysis, ExperimentError> {
    let probes: Vec<ProbeDetail> = details(trace)?;
    let models = &config.links;
    let bins = config.rtt.bins;
    let mut samples_table = Table::new(
        "rtt_samples",
        &["probe", "t", "hour_of_week", "series", "link", "network_s", "total_s"],
    );
    let mut by_series: BTreeMap<String, (LinkKind, Vec<Point>)> = BTreeMap::new();
    for (p, rec) in probes.iter().zip(&trace.records) {
        for s in &p.samples {
            samples_table.push([
                p.k.to_string(),
                rec.at.to_string(),
                p.hour_of_week.to_string(),
                s.series.clone(),
                s.link.name().to_string(),
                s.network.to_string(),
                s.total.to_string(),
            ]);
            by_series
                .entry(s.series.clone())
                .or_insert((s.link, Vec::new()))
                .1
                .push((rec.at, s.network, s.total));
        }
    }

    let mut a = Analysis::default();
    let mut daily = Table::new("daily", &["series", "day", "count", "mean_total_s", "min_total_s", "max_total_s"]);
    let mut hourly = Table::new("hourly", &["series", "hour_of_week", "count", "mean_network_s"]);
    let mut summary = serde_json::Map::new();
    let mut network_hists: BTreeMap<String, Histogram> = BTreeMap::new();
    let server = models.t_server_cloud + models.t_cloud;
    for (name, (link, xs)) in &by_series {
        let model = models.uplink(*link);
        let net_hi = server + model.hard_max();
        let total_hi = net_hi + models.metering.hard_max();
        let nets: Vec<f64> = xs.iter().map(|x| x.1).collect();
        let totals: Vec<f64> = xs.iter().map(|x| x.2).collect();
        let hn = Histogram::from_samples(&nets, bins, 0.0, net_hi).expect("bins checked at load");
        let ht = Histogram::from_samples(&totals, bins, 0.0, total_hi).expect("bins checked at load");
        a.tables.push(Table::from_histogram(&format!("hist_{name}_network"), &hn));
        a.tables.push(Table::from_histogram(&format!("hist_{name}_total"), &ht));
        let modes = hn.modes();
        summary.insert(
            name.clone(),
            json!({
                "link": link.name(),
                "count": xs.len(),
                "network_mean": mean(nets.iter().copied()),
                "network_max": nets.iter().copied().reduce(f64::max),
                "network_modes": modes,
                "total_mean": mean(totals.iter().copied()),
                "total_median": median(&totals),
                "total_min": totals.iter().copied().reduce(f64::min),
                "total_max": totals.iter().copied().reduce(f64::max),
                "total_peak_bin_center": ht.bin_center(ht.peak_bin()),
                "hard_max": model.hard_max(),
                "components": model.components().len(),
            }),
        );
        for day in 0..7 {
            let d: Vec<f64> = xs
                .iter()
                .filter(|x| ((x.0 / DAY).floor() as i64).rem_euclid(7) == day)
                .map(|x| x.2)
                .collect();
            if d.is_empty() {
                continue;
            }
            daily.push([
                name.clone(),
                day.to_string(),
                d.len().to_string(),
                mean(d.iter().copied()).unwrap_or(0.0).to_string(),
                d.iter().copied().fold(f64::INFINITY, f64::min).to_string(),
                d.iter().copied().fold(f64::NEG_INFINITY, f64::max).to_string(),
            ]);
        }
        let mut per_hour: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for x in xs {
            per_hour.entry(DiurnalProfile::hour_of_week(x.0)).or_default().push(x.1);
        }
        for (h, v) in per_hour {
            hourly.push([
                name.clone(),
                h.to_string(),
                v.len().to_string(),
                mean(v.iter().copied()).unwrap_or(0.0).to_string(),
            ]);
        }
        a.histograms.push((format!("hist_{name}_network"), hn.clone()));
        a.histograms.push((format!("hist_{name}_total"), ht));
        network_hists.insert(name.clone(), hn);
    }

    let expected = (config.duration / config.probe_interval).ceil() as usize;
    a.checks.push(Check::new(
        "probe_cadence",
        probes.len() == expected,
        format!("{} probes, expected {expected}", probes.len()),
    ));
    for (name, (link, xs)) in &by_series {
        let model = models.uplink(*link);
        let max = xs.iter().map(|x| x.1 - server).fold(0.0, f64::max);
        a.checks.push(Check::new(
            &format!("{name}_within_hard_max"),
            max <= model.hard_max(),
            format!("max {max} s, bound {} s", model.hard_max()),
        ));
    }
    if let Some(h) = network_hists.get("3g") {
        let modes = h.modes().len();
        let components = models.three_g.components().len();
        a.checks.push(Check::new(
            "3g_modes",
            modes >= components,
            format!("{modes} modes detected, {components} mixture components"),
        ));
    }
    let mut chi = Vec::new();
    if let Some(reference) = network_hists.get("3g_location0") {
        for i in 1..config.rtt.location_replicas {
            let name = format!("3g_location{i}");
            let other = &network_hists[&name];
            let c = chi_square_homogeneity(reference, other).map_err(|e| ExperimentError::Analysis(e.to_string()))?;
            a.checks.push(Check::new(
                &format!("location_independence_{i}"),
                c.p_value >= config.rtt.alpha,
                format!("chi2 {:.3}, dof {}, p {:.4}", c.statistic, c.dof, c.p_value),
            ));
            chi.push(json!({"pair": ["3g_location0", name], "statistic": c.statistic, "dof": c.dof, "p_value": c.p_value}));
        }
    }
    summary.insert("probes".into(), json!(probes.len()));
    summary.insert("location_chi_square".into(), json!(chi));
    a.summary = serde_json::Value::Object(summary);
    a.tables.insert(0, samples_table);
    a.tables.push(daily);
    a.tables.push(hourly);
    Ok(a)
}
