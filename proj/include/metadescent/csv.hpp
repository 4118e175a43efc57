#pragma once

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "metadescent/experiments.hpp"

namespace metadescent {

/// Shortest decimal form that round-trips to the same double. '.' decimal
/// separator regardless of locale; nan/inf spelled as such (sign dropped
/// from nan).
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Frozen sweep CSV column order; part of the external contract.
inline const char* kSweepCsvHeader =
    "p,s,m,n_t,n_v,nu,sigma,alpha_t,replicates,skips,estimand,mean,std,"
    "stderr,b_w0,b_w_ideal,b_w,eta,b_eig_min,b_eig_max,c_eig_min,c_eig_max,"
    "flags";

namespace detail {

inline std::string record_flags(const SweepRecord& rec, bool applicable) {
    std::vector<const char*> tokens;
    if (rec.bounds.below_threshold) tokens.push_back("below_threshold");
    if (rec.bounds.vacuous_eta) tokens.push_back("vacuous_eta");
    if (rec.bounds.ideal_infinite) tokens.push_back("ideal_unbounded");
    if (!applicable) tokens.push_back("not_applicable");
    if (rec.invalid) tokens.push_back("invalid");
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ';';
        out += tokens[i];
    }
    return out;
}

} // namespace detail

/// One row per (p, estimand), in grid order then plan estimand order.
/// LF line endings; the header row is always emitted.
inline void write_sweep_csv(std::ostream& os, const SweepPlan& plan,
                            const std::vector<SweepRecord>& records) {
    os << kSweepCsvHeader << "\n";
    for (const SweepRecord& rec : records) {
        for (Estimand e : plan.estimands) {
            const EstimandStat& st = rec.stats[int(e)];
            os << rec.p << ',' << rec.cfg.s << ',' << rec.cfg.m << ','
               << rec.cfg.n_t << ',' << rec.cfg.n_v << ','
               << format_double(rec.cfg.nu()) << ','
               << format_double(rec.cfg.sigma) << ','
               << format_double(rec.cfg.alpha_t) << ',' << st.count << ','
               << rec.skips << ',' << estimand_name(e) << ','
               << format_double(st.mean) << ',' << format_double(st.stddev)
               << ',' << format_double(st.stderror) << ','
               << format_double(rec.bounds.b_w0) << ','
               << format_double(rec.bounds.b_w_ideal) << ','
               << format_double(rec.bounds.b_w) << ','
               << format_double(rec.bounds.eta) << ','
               << format_double(rec.bounds.b_eig_min) << ','
               << format_double(rec.bounds.b_eig_max) << ','
               << format_double(rec.bounds.c_eig_min) << ','
               << format_double(rec.bounds.c_eig_max) << ','
               << detail::record_flags(rec, st.applicable) << "\n";
        }
    }
}

inline std::string sweep_csv_string(const SweepPlan& plan,
                                    const std::vector<SweepRecord>& records) {
    std::ostringstream os;
    write_sweep_csv(os, plan, records);
    return os.str();
}

/// symbol,value pairs of one bound report.
inline void write_bounds_csv(std::ostream& os, const BoundReport& r) {
    os << "symbol,value\n";
    os << "alpha_t_prime," << format_double(r.alpha_t_prime) << "\n";
    os << "b_eig_min," << format_double(r.b_eig_min) << "\n";
    os << "b_eig_max," << format_double(r.b_eig_max) << "\n";
    os << "c_eig_min," << format_double(r.c_eig_min) << "\n";
    os << "c_eig_max," << format_double(r.c_eig_max) << "\n";
    os << "D," << format_double(r.d_factor) << "\n";
    os << "b_delta," << format_double(r.b_delta) << "\n";
    os << "b_w0," << format_double(r.b_w0) << "\n";
    os << "b_w0_lower," << format_double(r.b_w0_lower) << "\n";
    os << "b_w_ideal," << format_double(r.b_w_ideal) << "\n";
    os << "b_w," << format_double(r.b_w) << "\n";
    os << "eta," << format_double(r.eta) << "\n";
}

} // namespace metadescent
