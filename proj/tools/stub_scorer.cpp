// Bundled reference scorer: reads SDF records on stdin and prints one score
// per molecule (negated shape Tanimoto against a target VOXL shape), so lower
// is better and a perfect shape match scores -1.0.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "desert/chem.hpp"
#include "desert/geom.hpp"

int main(int argc, char** argv) {
    CLI::App app{"shape-overlap stub scorer (SDF on stdin, scores on stdout)"};
    std::string shape_path;
    app.add_option("--shape", shape_path, "target shape (VOXL file)")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        std::ifstream sf(shape_path);
        if (!sf) throw desert::Error("io-error", "cannot open " + shape_path);
        desert::VoxelGrid target = desert::read_voxl(sf);

        std::vector<desert::Molecule> mols = desert::read_sdf(std::cin);
        for (const desert::Molecule& m : mols) {
            double score = 0.0;
            try {
                desert::VoxelGrid g = desert::voxelize(m, target.spec());
                score = -desert::shape_tanimoto(g, target);
            } catch (const desert::Error&) {
                score = 0.0;  // unscorable geometry counts as no overlap
            }
            std::cout << score << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "stub_scorer: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
