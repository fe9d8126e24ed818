use arnsim::arn::{input_port_controller, ArnInfo, ArnTable};
use arnsim::routing::{dmodk_route, select_alternative_oport, CreditView};
use arnsim::{PortId, RlftParams, SimTime, Topology, Vc};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

struct Flat;

impl CreditView for Flat {
    fn available(&self, port: PortId, _: Vc) -> u32 {
        port as u32 % 7
    }
    fn vc_capacity(&self, _: Vc) -> u32 {
        21
    }
}

fn topology(c: &mut Criterion) {
    c.bench_function("build_p24_n3", |b| {
        b.iter(|| Topology::build(RlftParams::new(24, 3).unwrap()))
    });
    let t = Topology::build(RlftParams::new(12, 3).unwrap());
    c.bench_function("dmodk_all_pairs_p12", |b| {
        b.iter(|| {
            let mut acc = 0u32;
            for sw in 0..t.switch_count() {
                for d in 0..t.endnode_count() {
                    acc += dmodk_route(&t, sw, d) as u32;
                }
            }
            acc
        })
    });
    let leaf = t.attachment(0).0;
    c.bench_function("select_alternative_oport", |b| {
        b.iter(|| select_alternative_oport(&t, leaf, black_box(300), 0, 6, Some(1), &Flat))
    });
}

fn arn_table(c: &mut Criterion) {
    let mut tb = ArnTable::new(64);
    for d in 0..48u32 {
        let info = ArnInfo {
            dst: d,
            port: (d % 6) as PortId,
            vc: 0,
            arn_id: d,
            root_info: 2,
        };
        tb.process_arn(info, false, 2, SimTime::ZERO, |_| {
            (d % 2 == 0).then_some((7, 1))
        });
    }
    c.bench_function("input_port_controller_48", |b| {
        b.iter(|| input_port_controller(&tb, black_box(31), 0, false, true))
    });
}

criterion_group!(benches, topology, arn_table);
criterion_main!(benches);
