#pragma once

#include <span>
#include <string>
#include <vector>

#include "surt/errors.h"

namespace surt {

// Output alphabet: the symbol ids plus blank and end-of-sentence.
struct TokenVocab {
  int size = 0;
  int blank = 0;
  int eos = 0;
  std::vector<int> symbols;

  // blank = 0, symbols 1..n, eos = n + 1.
  static TokenVocab with_symbols(int n) {
    if (n < 1) throw ArgumentError("vocabulary needs at least one symbol");
    TokenVocab v;
    v.size = n + 2;
    v.blank = 0;
    v.eos = n + 1;
    for (int s = 1; s <= n; ++s) v.symbols.push_back(s);
    return v;
  }

  bool is_symbol(int id) const { return id > 0 && id < size && id != blank && id != eos; }
  bool contains(int id) const { return id >= 0 && id < size; }

  // Checks a training reference: no blank, ids in range and, when
  // `require_eos`, exactly one eos in final position.
  void validate_reference(std::span<const int> ref, bool require_eos) const {
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const int id = ref[i];
      if (!contains(id)) {
        throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(size));
      }
      if (id == blank) throw ArgumentError("reference contains the blank token");
      if (id == eos && (!require_eos || i + 1 != ref.size())) {
        throw ArgumentError("eos may only appear as the final reference token");
      }
    }
    if (require_eos && (ref.empty() || ref.back() != eos)) {
      throw ArgumentError("reference must end with the eos token");
    }
  }

  std::vector<int> strip_eos(std::span<const int> tokens) const {
    std::vector<int> out;
    for (int t : tokens)
      if (t != eos) out.push_back(t);
    return out;
  }
};

}  // namespace surt
