#include "lightsae/experiment.hpp"

int main(int argc, char** argv)
{
  return lightsae::cli_main(argc, argv);
}
