// Builds a small teacher dataset, trains a width-256 network with projected
// GD, and prints the risk trajectory and the matching bound report.
#include <iostream>

#include "drnn/drnn.hpp"

int main() {
    using namespace drnn;
    const int d = 3, T = 6, n = 16, m = 256;
    const double alpha = 0.3;

    TeacherSpec teacher;
    teacher.map = constant_map(0.5, Vector::Constant(d, 1.0 / std::sqrt(3.0)), 0.5);
    teacher.alpha = alpha;
    teacher.mcSamples = 100'000;
    teacher.seed = 11;
    const Dataset ds = make_dataset(teacher, n, d, T, /*inputSeed=*/7);

    const RnnParams params0 = symmetric_init({m, d, alpha, /*seed=*/1});
    std::cout << "F(X; Phi(0)) = " << output_forward(params0, ds.inputs[0], teacher.act).transpose() << "\n";

    TrainOptions opt;
    opt.variant = Variant::projected_gd;
    opt.init = {m, d, alpha, 1};
    opt.radii = ProjectionRadii{teacher.map.nuW, teacher.map.nuU, teacher.map.nuC};
    opt.tau = 64;
    opt.eta = step_size_schedule(T, opt.tau);
    opt.historyStride = 16;
    const TrainReport rep = run_training(opt, ds);
    for (const auto& row : rep.rows) std::cout << "step " << row.step << "  risk " << row.risk << "\n";
    std::cout << "min risk " << rep.minRisk << ", averaged iterate " << rep.avgIterateRisk << "\n";

    BoundInputs in = BoundInputs::for_activation(teacher.act);
    in.alpha = alpha;
    in.rho = *opt.radii;
    in.nu = {teacher.map.nuW, teacher.map.nuU, teacher.map.nuC};
    in.m = m;
    in.d = d;
    in.T = T;
    in.n = n;
    in.tau = opt.tau;
    std::cout << bound_report(in).to_text();
}
