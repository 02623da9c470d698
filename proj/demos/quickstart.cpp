// Library walkthrough on a small synthetic domain pair: train a counting network with a variance
// head, look at its uncertainty, pick target images by aleatoric score and committee disagreement,
// finetune on them and compare target error before and after. Runs in well under a minute.

#include <cstdio>
#include <vector>

#include "ucount/data/generator.hpp"
#include "ucount/eval/metrics.hpp"
#include "ucount/model/ctn.hpp"
#include "ucount/selection/selection.hpp"
#include "ucount/training/trainer.hpp"
#include "ucount/uncertainty/sparsification.hpp"

using namespace ucount;

int main() {
  DomainConfig source;
  source.height = source.width = 32;
  source.count_min = 12;
  source.count_max = 25;
  source.seed = 1;
  DomainConfig target = source.shifted(2);

  const auto train_set = generate_domain(source, 40, "src");
  auto reseeded = [](DomainConfig d, std::uint64_t seed) {
    d.seed = seed;
    return d;
  };
  const auto source_test = generate_domain(reseeded(source, 3), 10, "srct");
  const auto pool = generate_domain(target, 30, "pool");
  const auto target_test = generate_domain(reseeded(target, 4), 10, "tt");

  TrainConfig tc;
  tc.stage1_epochs = 12;
  tc.stage2_epochs = 3;
  tc.stage3_epochs = 5;
  tc.finetune_epochs = 30;
  tc.crop_size = 32;
  tc.seed = 7;
  const ArchConfig arch;

  std::printf("training on %zu source images...\n", train_set.size());
  const ModelCheckpoint ctn = train(init_model(arch, 7), train_set, tc).model;
  std::printf("source test: %s\n", evaluate(ctn, source_test).summary().c_str());

  // Where the network is unsure, it tends to be wrong.
  std::vector<DenseGrid> var, err;
  for (const Sample& s : source_test) {
    const PredictionPair p = forward(ctn, s.image);
    var.push_back(aleatoric_map(p));
    err.push_back(error_map(p, s.gt_density));
  }
  const SparsificationCurve curve = sparsification_pooled(var, err, 20);
  std::printf("variance-ranked sparsification area vs oracle: %.3f\n", area_between(curve));

  const auto committee = train_committee(arch, train_set, tc, 2);
  std::vector<ModelCheckpoint> members;
  for (const auto& r : committee) members.push_back(r.model);

  std::vector<std::string> pool_ids;
  std::vector<ScoredEntry> by_aleatoric, by_kl;
  for (const Sample& s : pool) {
    pool_ids.push_back(s.id);
    by_aleatoric.push_back({s.id, score_aleatoric(ctn, s.image), "aleatoric"});
    by_kl.push_back({s.id, score_kl(members, s.image), "kl"});
  }

  std::printf("target test before finetuning: %s\n", evaluate(ctn, target_test).summary().c_str());
  const std::size_t budget = 5;
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<Sample> out;
    for (const auto& id : ids)
      for (const Sample& s : pool)
        if (s.id == id) out.push_back(s);
    return out;
  };
  const std::vector<std::pair<const char*, std::vector<std::string>>> choices{
      {"random", select_random(pool_ids, budget, 11)},
      {"aleatoric", select_top(ScoredPool::from_scores(by_aleatoric), budget)},
      {"kl", select_top(ScoredPool::from_scores(by_kl), budget)},
  };
  for (const auto& [name, ids] : choices) {
    const ModelCheckpoint tuned = finetune(ctn, pick(ids), tc).model;
    std::printf("  after finetuning on %zu %-9s images: %s\n", ids.size(), name,
                evaluate(tuned, target_test).summary().c_str());
  }
  return 0;
}
