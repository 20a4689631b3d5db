#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace casreg;
using casreg::testing::TempDir;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Runs the CLI inside `dir` (so a casreg.cfg there is picked up).
CliResult cli(const TempDir& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.path().string() + "' && '" CASREG_CLI_PATH "' " + args + " > stdout.txt 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "stdout.txt");
  r.err = slurp(dir / "stderr.txt");
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void write_phantom(const TempDir& dir, const std::string& name, std::uint64_t seed, int n = 24) {
  auto [img, lab] = make_phantom(seed, {n, n, n}, 4);
  save_volume(img, dir / (name + ".nii.gz"));
  save_labels(lab, dir / (name + "_labels.nii.gz"));
}

/// Bank of three phantoms at 24^3; atlas01 is the phantom written as "target".
void write_bank(const TempDir& dir) {
  for (int j = 0; j < 3; ++j) {
    auto [img, lab] = make_phantom(static_cast<std::uint64_t>(j), {24, 24, 24}, 4);
    save_atlas(dir / "bank", Atlas{atlas_name(j), img, lab, {{"age", "25"}}});
  }
  write_phantom(dir, "target", 1);
}

const char* kQuick = " --cascades 2 --iters 20";

}  // namespace

TEST(Cli, VersionAndHelp) {
  TempDir dir("cli");
  CliResult r = cli(dir, "--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(kVersion), std::string::npos);
  for (const char* cmd : {"register", "segment", "eval", "synth", "sweep"}) {
    r = cli(dir, std::string(cmd) + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find("--"), std::string::npos) << cmd;
    r = cli(dir, std::string(cmd) + " --version");
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find(kVersion), std::string::npos) << cmd;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir("cli");
  write_phantom(dir, "a", 1);
  CliResult r = cli(dir, "register --moving a.nii.gz --out-dir out");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE((r.out + r.err).find("--fixed"), std::string::npos);
  EXPECT_EQ(cli(dir, "").code, 2);
  EXPECT_EQ(cli(dir, "frobnicate").code, 2);
  EXPECT_EQ(cli(dir, "register --moving a.nii.gz --fixed a.nii.gz --out-dir o --bogus 1").code, 2);
  EXPECT_EQ(cli(dir, "register --moving a.nii.gz --fixed a.nii.gz --out-dir o --strategy sideways").code, 2);
  EXPECT_EQ(cli(dir, "register --moving a.nii.gz --fixed a.nii.gz --out-dir o --cascades 2 --scales 4,2").code, 2);
  EXPECT_EQ(cli(dir, "register --moving a.nii.gz --fixed a.nii.gz --out-dir o --window 8").code, 2);
}

TEST(Cli, RegisterSelfHasNoFolding) {
  TempDir dir("cli");
  write_phantom(dir, "a", 2, 32);
  const CliResult r = cli(dir, "register --moving a.nii.gz --fixed a.nii.gz --out-dir out --cascades 3");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"warped.nii.gz", "field.f32", "field.dims", "jacobian.csv", "loss_trace.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
  const auto jac = lines(slurp(dir / "out" / "jacobian.csv"));
  ASSERT_EQ(jac.size(), 2u);
  EXPECT_EQ(jac[0], "folding_fraction,min_det,mean_det");
  EXPECT_EQ(jac[1].substr(0, 2), "0,");
  const auto trace = lines(slurp(dir / "out" / "loss_trace.csv"));
  EXPECT_EQ(trace.size(), 1u + 3 * 100);
  const DisplacementField f = load_field(dir / "out" / "field.f32");
  EXPECT_LT(max_norm(f), 0.25);
}

TEST(Cli, StrategiesGiveDistinctFields) {
  TempDir dir("cli");
  write_phantom(dir, "a", 3);
  write_phantom(dir, "b", 4);
  const std::string base = "register --moving a.nii.gz --fixed b.nii.gz" + std::string(kQuick);
  ASSERT_EQ(cli(dir, base + " --out-dir acc --strategy accumulate").code, 0);
  ASSERT_EQ(cli(dir, base + " --out-dir suc --strategy successive").code, 0);
  EXPECT_NE(slurp(dir / "acc" / "field.f32"), slurp(dir / "suc" / "field.f32"));
}

TEST(Cli, OutputsDoNotDependOnThreadCount) {
  TempDir dir("cli");
  write_phantom(dir, "a", 5);
  write_phantom(dir, "b", 6);
  const std::string base = "register --moving a.nii.gz --fixed b.nii.gz" + std::string(kQuick);
  ASSERT_EQ(cli(dir, "--threads 1 " + base + " --out-dir t1").code, 0);
  ASSERT_EQ(cli(dir, "--threads 8 " + base + " --out-dir t8").code, 0);
  for (const char* f : {"warped.nii.gz", "field.f32", "jacobian.csv", "loss_trace.csv"})
    EXPECT_EQ(slurp(dir / "t1" / f), slurp(dir / "t8" / f)) << f;
}

TEST(Cli, IoErrorsExitThree) {
  TempDir dir("cli");
  EXPECT_EQ(cli(dir, "register --moving nope.nii --fixed nope.nii --out-dir o").code, 3);
  EXPECT_EQ(cli(dir, "eval --pred nope.nii --truth nope.nii").code, 3);
  EXPECT_EQ(cli(dir, "segment --target nope.nii --bank nobank --out o/seg.nii.gz").code, 3);
}

TEST(Cli, SegmentWithOracleAtlas) {
  TempDir dir("cli");
  write_bank(dir);
  const CliResult r = cli(dir, "segment --target target.nii.gz --bank bank --out seg/seg.nii.gz --k 1 --cascades 3");
  ASSERT_EQ(r.code, 0) << r.err;
  const LabelVolume seg = load_labels(dir / "seg" / "seg.nii.gz");
  EXPECT_GE(dice_report(seg, load_labels(dir / "target_labels.nii.gz"), foreground_labels(4)).mean, 0.95);
  const auto rep = lines(slurp(dir / "seg" / "report.csv"));
  ASSERT_GE(rep.size(), 5u);
  EXPECT_EQ(rep[0], "atlas_id,ncc,selected,status,folding,seconds");
  EXPECT_EQ(rep[2].rfind("atlas01,", 0), 0u);
  EXPECT_NE(rep[2].find(",1,ok,"), std::string::npos);
  EXPECT_NE(rep[1].find(",0,ok,"), std::string::npos);
  EXPECT_EQ(rep[4].rfind("# fusion=lwv", 0), 0u);
}

TEST(Cli, SegmentWithOversizedKWarns) {
  TempDir dir("cli");
  write_bank(dir);
  const CliResult r = cli(dir, "segment --target target.nii.gz --bank bank --out seg.nii.gz --k 10" + std::string(kQuick));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string rep = slurp(dir / "report.csv");
  EXPECT_NE(rep.find("# warning:"), std::string::npos);
  EXPECT_NE(rep.find("k_used=3"), std::string::npos);
}

TEST(Cli, MajorityEqualsZeroGainLwv) {
  TempDir dir("cli");
  write_bank(dir);
  const std::string base = "segment --target target.nii.gz --bank bank --k 3" + std::string(kQuick);
  ASSERT_EQ(cli(dir, base + " --out mv/seg.nii.gz --fusion majority").code, 0);
  ASSERT_EQ(cli(dir, base + " --out lwv/seg.nii.gz --fusion lwv --gain 0").code, 0);
  EXPECT_EQ(slurp(dir / "mv" / "seg.nii.gz"), slurp(dir / "lwv" / "seg.nii.gz"));
}

TEST(Cli, SegmentFailsWhenEveryAtlasFails) {
  TempDir dir("cli");
  write_phantom(dir, "target", 1);
  // A constant image cannot be scored against the target.
  save_atlas(dir / "bank", Atlas{"flat", Volume3({24, 24, 24}, 1.0), LabelVolume({24, 24, 24}), {}});
  const CliResult r = cli(dir, "segment --target target.nii.gz --bank bank --out seg.nii.gz" + std::string(kQuick));
  EXPECT_EQ(r.code, 5);
}

TEST(Cli, EvalExamples) {
  TempDir dir("cli");
  LabelVolume a({10, 1, 1}), b({10, 1, 1});
  for (int i : {0, 1, 2, 3}) a[static_cast<std::size_t>(i)] = 1;
  for (int i : {2, 3, 4, 5, 6, 7}) b[static_cast<std::size_t>(i)] = 1;
  save_labels(a, dir / "a.nii");
  save_labels(b, dir / "b.nii");
  CliResult r = cli(dir, "eval --pred a.nii --truth b.nii --labels 1 --csv d.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("1,0.4\n"), std::string::npos) << r.out;
  EXPECT_NE(slurp(dir / "d.csv").find("1,0.4\n"), std::string::npos);

  r = cli(dir, "eval --pred a.nii --truth a.nii");
  ASSERT_EQ(r.code, 0);
  for (int l = 1; l <= 7; ++l) EXPECT_NE(r.out.find(std::to_string(l) + ",1\n"), std::string::npos);

  LabelVolume c({10, 1, 1});
  for (int i : {6, 7, 8}) c[static_cast<std::size_t>(i)] = 1;
  save_labels(c, dir / "c.nii");
  r = cli(dir, "eval --pred a.nii --truth c.nii --labels 1");
  EXPECT_NE(r.out.find("1,0\n"), std::string::npos) << r.out;

  EXPECT_EQ(cli(dir, "eval --pred a.nii --truth b.nii --labels 1,x").code, 2);
}

TEST(Cli, SynthIsDeterministicAndComplete) {
  TempDir dir("cli");
  ASSERT_EQ(cli(dir, "synth --out-dir b1 --seed 7 --dims 20 --n-atlases 10 --labels 4").code, 0);
  ASSERT_EQ(cli(dir, "synth --out-dir b2 --seed 7 --dims 20 --n-atlases 10 --labels 4").code, 0);
  int dirs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "b1")) dirs += e.is_directory();
  EXPECT_EQ(dirs, 11);
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "b1")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir / "b1");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b2" / rel)) << rel;
  }
  EXPECT_EQ(read_meta(dir / "b1" / "target" / "meta.txt").at("role"), "target");
}

TEST(Cli, SynthTruthFieldDoesNotFold) {
  TempDir dir("cli");
  ASSERT_EQ(cli(dir, "synth --out-dir bank --seed 3 --dims 64 --n-atlases 1").code, 0);
  const DisplacementField f = load_field(dir / "bank" / "target" / "field.f32");
  EXPECT_EQ(f.dims(), (Dims{64, 64, 64}));
  EXPECT_EQ(jacobian_report(f).folding_fraction, 0.0);
}

TEST(Cli, SweepWritesReportAndRejectsBadGrid) {
  TempDir dir("cli");
  ASSERT_EQ(cli(dir, "synth --out-dir bank --seed 1 --dims 20 --n-atlases 2 --labels 4 --amplitude 2 --smoothness 3").code, 0);
  EXPECT_EQ(cli(dir, "sweep --bank bank --out s.csv --grid depth=1,2").code, 2);
  EXPECT_EQ(cli(dir, "sweep --bank bank --out s.csv --grid lambda=1..2").code, 2);
  const CliResult r = cli(dir, "sweep --bank bank --out s.csv --grid lambda=0.5,2 --cascades 1 --iters 5");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = lines(slurp(dir / "s.csv"));
  ASSERT_EQ(csv.size(), 1u + 2 * (4 + 2));
  EXPECT_EQ(csv[0], "config_id,target_id,label,dice,folding,seconds");
  EXPECT_NE(r.out.find("lambda=0.5,1,"), std::string::npos) << r.out;
}

TEST(Cli, ConfigFileSuppliesDefaults) {
  TempDir dir("cli");
  write_phantom(dir, "a", 8);
  std::ofstream(dir / "casreg.cfg") << "# defaults\ncascades=1\nregister.iters=3\nk=4\n";
  CliResult r = cli(dir, "register --moving a.nii.gz --fixed a.nii.gz --out-dir out");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(dir / "out" / "loss_trace.csv")).size(), 1u + 3);
  r = cli(dir, "register --moving a.nii.gz --fixed a.nii.gz --out-dir out2 --iters 4 --cascades 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(dir / "out2" / "loss_trace.csv")).size(), 1u + 2 * 4);

  std::ofstream(dir / "other.cfg") << "iters=2\n";
  r = cli(dir, "--config other.cfg register --moving a.nii.gz --fixed a.nii.gz --out-dir out3 --cascades 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(dir / "out3" / "loss_trace.csv")).size(), 1u + 2);

  std::ofstream(dir / "bad.cfg") << "colour=blue\n";
  EXPECT_EQ(cli(dir, "--config bad.cfg register --moving a.nii.gz --fixed a.nii.gz --out-dir o").code, 2);
  std::ofstream(dir / "badval.cfg") << "strategy=sideways\n";
  EXPECT_EQ(cli(dir, "--config badval.cfg register --moving a.nii.gz --fixed a.nii.gz --out-dir o").code, 2);
  EXPECT_EQ(cli(dir, "--config missing.cfg register --moving a.nii.gz --fixed a.nii.gz --out-dir o").code, 3);
}
